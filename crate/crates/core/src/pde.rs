//! Finite-difference oracle for the terminal-value problem
//!
//! ```text
//! -u_t = 1/2 sigma(t)^2 u_xx + b(t,x) u_x + f(t, x, u, sigma(t) u_x),   u(T, .) = g
//! ```
//!
//! so that `Y_t = u(t, X_t)` and `Z_t = sigma(t) u_x(t, X_t)`. Each backward
//! step treats diffusion implicitly (one tridiagonal solve) and the drift and
//! driver explicitly with the central gradient of the previous level. Both
//! ends impose a zero second difference, i.e. linear extrapolation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, BoundParams};
use crate::error::{Error, Result};
use crate::numerics::{abs_pow, fit_line, interp_linear, solve_tridiagonal, LineFit};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of cells; the grid has `n_x + 1` nodes.
    pub n_x: usize,
    pub n_t: usize,
    /// Temporal `Z` envelope the driver's gradient argument is clamped to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_clip: Option<BoundParams>,
    /// `Y` envelope; the solve aborts once `|u|` exceeds ten times it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_guard: Option<BoundParams>,
    /// Keep every `store_stride`-th time level (the first and last are always kept).
    #[serde(default = "one")]
    pub store_stride: usize,
    /// Also solve for `v(t,x) = E[int_t^T |Z_s|^(l+1) ds | X_t = x]`.
    #[serde(default)]
    pub track_energy: bool,
}

fn one() -> usize {
    1
}

impl PdeConfig {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, n_t: usize) -> Self {
        PdeConfig {
            x_min,
            x_max,
            n_x,
            n_t,
            gradient_clip: None,
            blowup_guard: None,
            store_stride: 1,
            track_energy: false,
        }
    }

    /// Domain `x0 -/+ (k sigma_max sqrt(T) + |b|_max T)`.
    pub fn auto_domain(p: &ProblemSpec, k: f64, n_x: usize, n_t: usize) -> Result<Self> {
        let x0 = p.forward.scalar_x0()?;
        let horizon = p.horizon();
        let sigma_max = (0..=64)
            .map(|i| p.forward.sigma_at(horizon * i as f64 / 64.0).abs())
            .fold(0.0, f64::max);
        let half = k * sigma_max * horizon.sqrt();
        let b_max = (0..=64)
            .flat_map(|i| {
                let t = horizon * i as f64 / 64.0;
                (0..=64).map(move |j| (t, x0 - half + 2.0 * half * j as f64 / 64.0))
            })
            .map(|(t, x)| p.forward.drift_at(t, x).abs())
            .fold(0.0, f64::max);
        let half = (half + b_max * horizon).max(1.0);
        Ok(PdeConfig::new(x0 - half, x0 + half, n_x, n_t))
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn validate(&self, p: &ProblemSpec) -> Result<()> {
        let x0 = p.forward.scalar_x0()?;
        if !(self.x_min < x0 && x0 < self.x_max) {
            return Err(Error::config(
                "pde.x_min",
                format!("domain [{}, {}] must contain x0 = {x0}", self.x_min, self.x_max),
            ));
        }
        if self.n_x < 32 {
            return Err(Error::config("pde.n_x", format!("need at least 32 cells, got {}", self.n_x)));
        }
        if self.n_t == 0 {
            return Err(Error::config("pde.n_t", "must be positive"));
        }
        if self.store_stride == 0 {
            return Err(Error::config("pde.store_stride", "must be positive"));
        }
        if let Some(bp) = &self.gradient_clip {
            expect_kind(bp, BoundKind::ZTemporal, "pde.gradient_clip")?;
        }
        if let Some(bp) = &self.blowup_guard {
            expect_kind(bp, BoundKind::YGrowth, "pde.blowup_guard")?;
        }
        Ok(())
    }
}

fn expect_kind(bp: &BoundParams, kind: BoundKind, path: &str) -> Result<()> {
    if bp.kind != kind {
        return Err(Error::Kind {
            expected: format!("{} ({path})", kind.name()),
            found: bp.kind.name().into(),
        });
    }
    Ok(())
}

/// Stored time levels of `u`, `u_x` and, optionally, the energy `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub xs: Vec<f64>,
    /// Stored times in increasing order; `ts[0] = 0`, last is `T`.
    pub ts: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub ux: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// Nodes where the driver's gradient argument was clamped when stepping to this level.
    pub clipped: Vec<Vec<bool>>,
    pub energy: Option<Vec<Vec<f64>>>,
    /// `(t, max |u_x|)` for every time level, kink nodes excluded, increasing in `t`.
    pub max_abs_ux: Vec<(f64, f64)>,
    pub horizon: f64,
    pub dt: f64,
    pub dx: f64,
    pub clip_events: usize,
    /// Nodes excluded from gradient statistics because their stencil touches a kink of `g`.
    pub kink_nodes: Vec<usize>,
    pub scheme: &'static str,
}

impl ValueField {
    /// `u(t, x)` by linear interpolation in `x` at the stored level closest to `t`.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let k = self.level_near(t);
        interp_linear(&self.xs, &self.u[k], x)
    }

    /// `sigma(t) u_x(t, x)`.
    pub fn z_at(&self, t: f64, x: f64) -> f64 {
        let k = self.level_near(t);
        self.sigma[k] * interp_linear(&self.xs, &self.ux[k], x)
    }

    pub fn u0_at(&self, x: f64) -> f64 {
        interp_linear(&self.xs, &self.u[0], x)
    }

    pub fn level_near(&self, t: f64) -> usize {
        let j = self.ts.partition_point(|&s| s < t);
        if j == 0 {
            0
        } else if j == self.ts.len() {
            j - 1
        } else if (self.ts[j] - t).abs() < (t - self.ts[j - 1]).abs() {
            j
        } else {
            j - 1
        }
    }

    pub fn is_kink_node(&self, i: usize) -> bool {
        self.kink_nodes.binary_search(&i).is_ok()
    }

    /// Writes `t,x,u,ux,clipped` for every stored node, one row each.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x", "u", "ux", "clipped"])?;
        for (k, &t) in self.ts.iter().enumerate() {
            for (i, &x) in self.xs.iter().enumerate() {
                out.write_record([
                    t.to_string(),
                    x.to_string(),
                    self.u[k][i].to_string(),
                    self.ux[k][i].to_string(),
                    u8::from(self.clipped[k][i]).to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn central_gradient(u: &[f64], dx: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = (u[1] - u[0]) / dx;
    out[n - 1] = (u[n - 1] - u[n - 2]) / dx;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
    }
}

fn kink_nodes(p: &ProblemSpec, xs: &[f64], dx: f64) -> Vec<usize> {
    let mut points = p.terminal.singular_points();
    if let Some(rho) = &p.projection {
        points.extend([rho.radius - 1.0, rho.radius + 1.0, -rho.radius + 1.0, -rho.radius - 1.0]);
    }
    let mut out: Vec<usize> = xs
        .iter()
        .enumerate()
        .filter(|(_, &x)| points.iter().any(|&s| (x - s).abs() <= 1.01 * dx))
        .map(|(i, _)| i)
        .collect();
    out.sort_unstable();
    out
}

/// Largest effective transport speed `sigma |d_z f| + |b|` over the terminal
/// gradient range, probed by central differences in `z`.
fn transport_speed(p: &ProblemSpec, xs: &[f64], g: &[f64], z_max: f64, t_probe: f64) -> f64 {
    let horizon = p.horizon();
    let sigma_max = (0..=16)
        .map(|i| p.forward.sigma_at(horizon * i as f64 / 16.0).abs())
        .fold(0.0, f64::max);
    let stride = (xs.len() / 64).max(1);
    let mut speed: f64 = 0.0;
    for i in (0..xs.len()).step_by(stride) {
        let (x, y) = (xs[i], g[i]);
        let b = p.forward.drift_at(t_probe, x).abs();
        let mut slope: f64 = 0.0;
        for j in 0..=32 {
            let z = -z_max + 2.0 * z_max * j as f64 / 32.0;
            let h = 1e-5 * (1.0 + z.abs());
            let d = (p.generator_value(t_probe, x, y, z + h) - p.generator_value(t_probe, x, y, z - h)) / (2.0 * h);
            if d.is_finite() {
                slope = slope.max(d.abs());
            }
        }
        speed = speed.max(sigma_max * slope + b);
    }
    speed
}

pub fn solve_pde(p: &ProblemSpec, cfg: &PdeConfig) -> Result<ValueField> {
    cfg.validate(p)?;
    let nx = cfg.n_x;
    let nodes = nx + 1;
    let dx = cfg.dx();
    let horizon = p.horizon();
    let nt = cfg.n_t;
    let dt = horizon / nt as f64;
    let t_of = |n: usize| if n == nt { horizon } else { horizon * n as f64 / nt as f64 };
    let xs: Vec<f64> = (0..nodes).map(|i| cfg.x_min + dx * i as f64).collect();
    let kinks = kink_nodes(p, &xs, dx);
    let is_kink = |i: usize| kinks.binary_search(&i).is_ok();
    let l = p.growth.l;

    let mut u = xs.iter().map(|&x| p.terminal_value(x)).collect::<Result<Vec<f64>>>()?;
    let mut ux = vec![0.0; nodes];
    central_gradient(&u, dx, &mut ux);

    // Configuration-time stability check for the explicit transport part.
    let sigma_t = p.forward.sigma_at(horizon).abs();
    let mut z_max = ux.iter().map(|v| (sigma_t * v).abs()).fold(0.0, f64::max);
    if let Some(bp) = &cfg.gradient_clip {
        let t_probe = t_of(nt - 1);
        let env = xs
            .iter()
            .map(|&x| bp.eval(t_probe, x))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        z_max = z_max.min(env);
    }
    let speed = transport_speed(p, &xs, &u, z_max.max(1e-12), t_of(nt - 1));
    if speed > 0.0 {
        let limit = 0.5 * dx / speed;
        if dt > limit {
            return Err(Error::Cfl { dt, limit });
        }
    }

    let max_ux = |ux: &[f64]| {
        ux.iter()
            .enumerate()
            .filter(|(i, _)| !is_kink(*i))
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    };

    let stride = cfg.store_stride;
    let mut stored_t = vec![horizon];
    let mut stored_u = vec![u.clone()];
    let mut stored_ux = vec![ux.clone()];
    let mut stored_sigma = vec![sigma_t];
    let mut stored_clip = vec![vec![false; nodes]];
    let mut energy = cfg.track_energy.then(|| vec![0.0; nodes]);
    let mut stored_energy = cfg.track_energy.then(|| vec![vec![0.0; nodes]]);
    let mut max_abs = vec![(horizon, max_ux(&ux))];
    let mut clip_events = 0usize;

    // Interior unknowns are nodes 2..=nx-2; nodes 1 and nx-1 are explicit
    // because the zero-second-difference closure removes their coupling.
    let m = nx - 3;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; nodes];
    let mut clip_level = vec![false; nodes];
    let mut e_rhs = vec![0.0; nodes];

    for n in (0..nt).rev() {
        let t_old = t_of(n + 1);
        let t_new = t_of(n);
        let sigma_old = p.forward.sigma_at(t_old);
        let sigma_new = p.forward.sigma_at(t_new);

        for i in 0..nodes {
            let x = xs[i];
            let mut z = sigma_old * ux[i];
            clip_level[i] = false;
            if let Some(bp) = &cfg.gradient_clip {
                // The envelope is undefined at T; evaluate it at the new level.
                let env = bp.eval(t_new, x)?;
                if z.abs() > env {
                    z = env.copysign(z);
                    clip_level[i] = true;
                    clip_events += 1;
                }
            }
            let f = p.generator_value(t_old, x, u[i], z);
            let b = p.forward.drift_at(t_old, x);
            rhs[i] = u[i] + dt * (b * ux[i] + f);
            if !rhs[i].is_finite() {
                return Err(Error::Evaluation {
                    term: "explicit update".into(),
                    point: format!("(t,x,u,z)=({t_old},{x},{},{z})", u[i]),
                });
            }
            if energy.is_some() {
                e_rhs[i] = dt * abs_pow(sigma_old * ux[i], l + 1.0);
            }
        }

        let a = 0.5 * sigma_new * sigma_new * dt / (dx * dx);
        let solve = |rhs: &mut [f64], lower: &mut [f64], diag: &mut [f64], upper: &mut [f64]| {
            let u1 = rhs[1];
            let un = rhs[nx - 1];
            let sys = &mut rhs[2..nx - 1];
            for k in 0..m {
                lower[k] = -a;
                diag[k] = 1.0 + 2.0 * a;
                upper[k] = -a;
            }
            sys[0] += a * u1;
            sys[m - 1] += a * un;
            solve_tridiagonal(lower, diag, upper, sys);
            rhs[0] = 2.0 * rhs[1] - rhs[2];
            rhs[nx] = 2.0 * rhs[nx - 1] - rhs[nx - 2];
        };
        solve(&mut rhs, &mut lower, &mut diag, &mut upper);
        std::mem::swap(&mut u, &mut rhs);

        if let Some(v) = energy.as_mut() {
            // Energy transport uses the same drift and diffusion: v_new solves
            // the implicit system with source |Z|^(l+1) taken explicitly.
            let mut vr = vec![0.0; nodes];
            let fwd = &p.forward;
            for i in 0..nodes {
                let vx = if i == 0 {
                    (v[1] - v[0]) / dx
                } else if i == nx {
                    (v[nx] - v[nx - 1]) / dx
                } else {
                    (v[i + 1] - v[i - 1]) / (2.0 * dx)
                };
                vr[i] = v[i] + dt * fwd.drift_at(t_old, xs[i]) * vx + e_rhs[i];
            }
            solve(&mut vr, &mut lower, &mut diag, &mut upper);
            *v = vr;
        }

        central_gradient(&u, dx, &mut ux);

        if let Some(bp) = &cfg.blowup_guard {
            for i in 0..nodes {
                let limit = 10.0 * bp.eval(t_new, xs[i])?;
                if !(u[i].abs() <= limit) {
                    return Err(Error::BlowUp {
                        t: t_new,
                        x: xs[i],
                        value: u[i].abs(),
                    });
                }
            }
        } else if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                t: t_new,
                x: xs[i],
                value: u[i],
            });
        }

        max_abs.push((t_new, max_ux(&ux)));
        if n % stride == 0 || n == 0 {
            stored_t.push(t_new);
            stored_u.push(u.clone());
            stored_ux.push(ux.clone());
            stored_sigma.push(sigma_new);
            stored_clip.push(clip_level.clone());
            if let (Some(se), Some(v)) = (stored_energy.as_mut(), energy.as_ref()) {
                se.push(v.clone());
            }
        }
    }

    stored_t.reverse();
    stored_u.reverse();
    stored_ux.reverse();
    stored_sigma.reverse();
    stored_clip.reverse();
    if let Some(se) = stored_energy.as_mut() {
        se.reverse();
    }
    max_abs.reverse();

    Ok(ValueField {
        xs,
        ts: stored_t,
        u: stored_u,
        ux: stored_ux,
        sigma: stored_sigma,
        clipped: stored_clip,
        energy: stored_energy,
        max_abs_ux: max_abs,
        horizon,
        dt,
        dx,
        clip_events,
        kink_nodes: kinks,
        scheme: "imex-implicit-diffusion",
    })
}

/// Fitted power law `max_x |u_x| ~ (T - t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
    pub samples: usize,
    pub window: (f64, f64),
}

/// Fits `log max|u_x|` against `log(T - t)` over levels with `T - t` in
/// `window`, skipping the last two steps. Levels are thinned to at most 64
/// log-spaced samples so the fit does not over-weight the finest times.
///
/// A flat profile has no variance to explain, so the `R^2` floor is only
/// enforced when the residual spread is also non-negligible.
pub fn extract_rate_near_t(field: &ValueField, window: (f64, f64)) -> Result<RateFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!("invalid window ({lo}, {hi})")));
    }
    let lo = lo.max(2.0 * field.dt * (1.0 + 1e-9));
    let pts: Vec<(f64, f64)> = field
        .max_abs_ux
        .iter()
        .map(|&(t, m)| (field.horizon - t, m))
        .filter(|&(tau, m)| tau > lo && tau <= hi && m > 0.0)
        .collect();
    let mut chosen: Vec<(f64, f64)> = Vec::new();
    if !pts.is_empty() {
        let targets = 64usize;
        let (a, b) = (lo.ln(), hi.ln());
        for k in 0..targets {
            let target = a + (b - a) * (k as f64 + 0.5) / targets as f64;
            let best = pts
                .iter()
                .min_by(|p, q| (p.0.ln() - target).abs().total_cmp(&(q.0.ln() - target).abs()))
                .copied()
                .unwrap();
            if chosen.last() != Some(&best) && !chosen.contains(&best) {
                chosen.push(best);
            }
        }
    }
    if chosen.len() < 8 {
        return Err(Error::Fit(format!("only {} samples in the window", chosen.len())));
    }
    let xs: Vec<f64> = chosen.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = chosen.iter().map(|p| p.1.ln()).collect();
    let LineFit {
        slope,
        r_squared,
        residual_rms,
        ..
    } = fit_line(&xs, &ys).ok_or_else(|| Error::Fit("degenerate abscissae".into()))?;
    if r_squared < 0.9 && residual_rms > 0.01 {
        return Err(Error::Fit(format!(
            "R^2 = {r_squared:.3} with residual rms {residual_rms:.3e}"
        )));
    }
    Ok(RateFit {
        exponent: slope,
        r_squared,
        residual_rms,
        samples: chosen.len(),
        window: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        manufactured_solution, DriftSpec, ForwardModel, GeneratorFamily, GeneratorSpec, GrowthParams, TerminalSpec,
    };

    fn problem(generator: GeneratorSpec, terminal: TerminalSpec, l: f64) -> ProblemSpec {
        ProblemSpec::new(
            "pde",
            ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
            generator,
            terminal,
            GrowthParams::with_l(l),
        )
    }

    #[test]
    fn linear_terminal_is_preserved() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 2.0);
        let f = solve_pde(&p, &PdeConfig::new(-6.0, 6.0, 200, 100)).unwrap();
        for (i, &x) in f.xs.iter().enumerate() {
            assert!((f.u[0][i] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_superquadratic_benchmark() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 2.0);
        let f = solve_pde(&p, &PdeConfig::new(-6.0, 6.0, 400, 2000)).unwrap();
        // Exact solution u = 2x + 8(T - t).
        assert!((f.u0_at(0.0) - 8.0).abs() < 1e-9, "{}", f.u0_at(0.0));
        let k = f.level_near(0.5);
        for i in 1..f.xs.len() - 1 {
            let d2 = f.u[k][i + 1] - 2.0 * f.u[k][i] + f.u[k][i - 1];
            assert!(d2.abs() <= 1e-6 * 8.0);
        }
    }

    #[test]
    fn quadratic_heat_moment() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::power(1.0, 2.0), 2.0);
        let f = solve_pde(&p, &PdeConfig::new(-8.0, 8.0, 400, 200)).unwrap();
        for &x in &[-1.0, 0.0, 0.5] {
            assert!((f.u0_at(x) - (x * x + 1.0)).abs() < 1e-3, "x={x}: {}", f.u0_at(x));
        }
    }

    #[test]
    fn manufactured_refinement_ratio() {
        let p = ProblemSpec::new(
            "mms",
            ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
            GeneratorSpec::new(GeneratorFamily::Manufactured),
            TerminalSpec::new(crate::problem::TerminalFamily::Custom {
                expr: crate::problem::Expr::parse("exp(-1) * sin(x)").unwrap(),
            }),
            GrowthParams::with_l(2.0),
        );
        let pi = std::f64::consts::PI;
        let err = |nx: usize, nt: usize| {
            let f = solve_pde(&p, &PdeConfig::new(-pi, pi, nx, nt)).unwrap();
            f.xs
                .iter()
                .enumerate()
                .map(|(i, &x)| (f.u[0][i] - manufactured_solution(0.0, x)).abs())
                .fold(0.0, f64::max)
        };
        let e = [err(100, 400), err(200, 800), err(400, 1600)];
        assert!(e[0] / e[1] >= 1.7 && e[1] / e[2] >= 1.7, "{e:?}");
    }

    #[test]
    fn cfl_violation_is_detected() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(10.0, 0.0), 2.0);
        assert!(matches!(
            solve_pde(&p, &PdeConfig::new(-6.0, 6.0, 400, 10)),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn config_is_validated() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 2.0);
        assert!(solve_pde(&p, &PdeConfig::new(1.0, 6.0, 200, 10)).is_err());
        assert!(solve_pde(&p, &PdeConfig::new(-1.0, 1.0, 16, 10)).is_err());
        let mut cfg = PdeConfig::new(-1.0, 1.0, 64, 10);
        cfg.gradient_clip = Some(BoundParams::new(BoundKind::YGrowth, &p.growth, 1.0));
        assert!(matches!(solve_pde(&p, &cfg), Err(Error::Kind { .. })));
    }

    #[test]
    fn blowup_guard_trips() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 2.0);
        let mut cfg = PdeConfig::new(-6.0, 6.0, 200, 2000);
        cfg.blowup_guard = Some(BoundParams::new(BoundKind::YGrowth, &p.growth, 1.0).with_c(0.01));
        assert!(matches!(solve_pde(&p, &cfg), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn clipping_is_counted() {
        let mut p = problem(GeneratorSpec::power_z(1.0, 2.5), TerminalSpec::power(1.0, 0.5), 1.5);
        p.growth.p_g = 0.5;
        let mut cfg = PdeConfig::new(-5.0, 5.0, 200, 4000);
        cfg.gradient_clip = Some(BoundParams::new(BoundKind::ZTemporal, &p.growth, 1.0).with_c(0.05));
        let f = solve_pde(&p, &cfg).unwrap();
        assert!(f.clip_events > 0);
        assert!(f.clipped.iter().flatten().any(|&c| c));
    }

    #[test]
    fn energy_of_linear_benchmark() {
        // Z = 2 everywhere, so E_t int_t^T |Z|^3 ds = 8 (T - t).
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 2.0);
        let mut cfg = PdeConfig::new(-6.0, 6.0, 200, 1000);
        cfg.track_energy = true;
        cfg.store_stride = 100;
        let f = solve_pde(&p, &cfg).unwrap();
        let e = f.energy.as_ref().unwrap();
        assert_eq!(e.len(), f.ts.len());
        assert!((interp_linear(&f.xs, &e[0], 0.0) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn csv_export_has_every_node() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 2.0);
        let mut cfg = PdeConfig::new(-2.0, 2.0, 40, 10);
        cfg.store_stride = 5;
        let f = solve_pde(&p, &cfg).unwrap();
        assert_eq!(f.ts, vec![0.0, 0.5, 1.0]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 41);
        assert!(text.starts_with("t,x,u,ux,clipped\n"));
    }

    /// Largest `x`-derivative of `E|x + sqrt(tau) xi|^(1/2)`, by trapezoidal
    /// quadrature in `xi` and central differences in `x`.
    fn heat_root_gradient_max(tau: f64) -> f64 {
        let s = tau.sqrt();
        let u = |x: f64| {
            let n = 20_000;
            let (a, b) = (-9.0, 9.0);
            let h = (b - a) / n as f64;
            (0..=n)
                .map(|k| {
                    let xi = a + h * k as f64;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    w * (x + s * xi).abs().sqrt() * (-0.5 * xi * xi).exp()
                })
                .sum::<f64>()
                * h
                / (2.0 * std::f64::consts::PI).sqrt()
        };
        (1..200)
            .map(|j| {
                let x = 3.0 * s * j as f64 / 200.0;
                let d = 1e-4 * s;
                ((u(x + d) - u(x - d)) / (2.0 * d)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_rate_on_square_root_terminal() {
        let oracle = (heat_root_gradient_max(1e-3).ln() - heat_root_gradient_max(1e-1).ln()) / (1e-3f64.ln() - 1e-1f64.ln());
        assert!((oracle + 0.25).abs() < 0.02, "oracle exponent {oracle}");
        let mut p = problem(GeneratorSpec::zero(), TerminalSpec::power(1.0, 0.5), 1.5);
        p.growth.p_g = 0.5;
        let mut cfg = PdeConfig::new(-5.0, 5.0, 2000, 2000);
        cfg.store_stride = 100;
        let f = solve_pde(&p, &cfg).unwrap();
        let fit = extract_rate_near_t(&f, (0.01, 0.3)).unwrap();
        assert!((fit.exponent - oracle).abs() < 0.05, "{fit:?} vs {oracle}");
        assert!(fit.r_squared > 0.9);
    }

    #[test]
    fn flat_gradient_profile_fits_zero() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::abs(1.0, 0.0), 2.0);
        let mut cfg = PdeConfig::new(-6.0, 6.0, 600, 4000);
        cfg.store_stride = 1000;
        let f = solve_pde(&p, &cfg).unwrap();
        let fit = extract_rate_near_t(&f, (0.01, 0.3)).unwrap();
        assert!(fit.exponent.abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn short_window_is_a_fit_error() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::abs(1.0, 0.0), 2.0);
        let f = solve_pde(&p, &PdeConfig::new(-6.0, 6.0, 64, 10)).unwrap();
        assert!(matches!(extract_rate_near_t(&f, (0.05, 0.2)), Err(Error::Fit(_))));
    }
}
