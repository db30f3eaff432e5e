//! Least-squares Monte Carlo for the backward equation on a path ensemble.
//!
//! Conditional expectations are taken over equal-count bins of `X_{t_i}`.
//! Inside each bin the continuation value at `t_{i+1}` is regressed on
//! `(X_i - xbar, (X_i - xbar)^2, dW_i)`; the fit at the bin centre with
//! `dW_i = 0` is the bin value, and the `dW_i` coefficient is `Z_i`, which
//! agrees with `E_bin[Y_{i+1} dW_i] / dt` up to the control variates. Then
//!
//! ```text
//! Y_i = E_bin[Y_{i+1}] + dt f(t_i, X_i, E_bin[Y_{i+1}], clip(Z_i))
//! ```
//!
//! Two refinements keep the recursion usable for superquadratic drivers:
//!
//! * The explicit step is only stable while `dt (d_z f)^2 < 1`. With
//!   `c = d_z f` at a predictor `Z`, the continuation is evaluated at
//!   `X_{i+1} + sigma c dt` and `dt c Z` is subtracted again, which moves the
//!   linear transport into the expectation (a discrete change of drift).
//! * The continuation between knots is a shape-preserving cubic through the
//!   bin values, so that resampling the profile at every step does not add
//!   numerical diffusion of order `h^2` per step.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, BoundParams};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::numerics::{fit_line, mean, std_dev, Pchip, QuantileBins};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub bins: usize,
    #[serde(default = "default_floor")]
    pub min_paths_per_bin: usize,
}

fn default_floor() -> usize {
    50
}

impl RegressionBasis {
    pub fn quantile_bins(bins: usize) -> Self {
        RegressionBasis {
            bins,
            min_paths_per_bin: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config("basis.bins", format!("need at least 2 bins, got {}", self.bins)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub basis: RegressionBasis,
    /// Temporal `Z` envelope used to clip `Z_i` pathwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<BoundParams>,
    /// `Y` envelope; the recursion aborts once `|Y_i|` exceeds ten times it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_guard: Option<BoundParams>,
    /// Keep pathwise `Y`, `Z` and realised values at every knot.
    #[serde(default = "yes")]
    pub keep_paths: bool,
    /// Absorb the linearised `z`-drift of `f` into the continuation value.
    #[serde(default = "yes")]
    pub drift_shift: bool,
}

fn yes() -> bool {
    true
}

impl McConfig {
    pub fn new(bins: usize) -> Self {
        McConfig {
            basis: RegressionBasis::quantile_bins(bins),
            truncation: None,
            divergence_guard: None,
            keep_paths: true,
            drift_shift: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub center: f64,
    pub y_hat: f64,
    pub z_hat: f64,
    pub count: usize,
    /// Standard error of the bin mean of the realised value.
    pub se: f64,
    /// Within-bin slope and half second derivative of the continuation value.
    pub slope: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotData {
    pub t: f64,
    pub bins: Vec<BinSummary>,
    /// Fraction of paths whose `Z` was clipped.
    pub clip_fraction: f64,
    /// RMS residual of the within-bin regressions.
    pub residual_rms: f64,
    /// Pathwise values, empty unless paths are kept.
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// `g(X_N) + sum_{j >= i} dt f_j` along each path.
    pub realized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub knots: Vec<KnotData>,
    pub y0: f64,
    pub y0_se: f64,
    pub dt: f64,
    pub truncation: Option<BoundParams>,
    pub n_paths: usize,
    /// Realised value at `t_0` on every path, kept even without pathwise storage.
    pub realized0: Vec<f64>,
}

impl BackwardSolution {
    pub fn max_clip_fraction(&self) -> f64 {
        self.knots.iter().map(|k| k.clip_fraction).fold(0.0, f64::max)
    }

    /// Writes `t,bin_center,y_hat,z_hat,clip_fraction` with one row per bin and knot.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "bin_center", "y_hat", "z_hat", "clip_fraction"])?;
        for k in &self.knots {
            for b in &k.bins {
                out.write_record([
                    k.t.to_string(),
                    b.center.to_string(),
                    b.y_hat.to_string(),
                    b.z_hat.to_string(),
                    k.clip_fraction.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Empirical `E[exp(kappa int_0^T |Z_s|^{2l} ds)]` from pathwise `Z`.
    pub fn exponential_moment(&self, kappa: f64, l: f64) -> Option<f64> {
        let dt = self.dt;
        let n = self.n_paths;
        let inner = &self.knots[..self.knots.len().saturating_sub(1)];
        if inner.iter().any(|k| k.z.len() != n) {
            return None;
        }
        let total: f64 = (0..n)
            .map(|p| {
                let s: f64 = inner.iter().map(|k| k.z[p].abs().powf(2.0 * l) * dt).sum();
                (kappa * s).exp()
            })
            .sum();
        Some(total / n as f64)
    }
}

struct BinStep {
    ey: f64,
    z: f64,
    c: f64,
    fit: Fit,
}

#[derive(Clone, Copy)]
struct Fit {
    rss: f64,
    slope: f64,
    curvature: f64,
}

enum Continuation<'a> {
    Terminal(&'a ProblemSpec),
    Bins(Profile),
}

/// Profile through the bin centres: a shape-preserving cubic inside, and
/// beyond the outermost centres the local quadratic fitted in that bin.
struct Profile {
    inner: Option<Pchip>,
    first: Tail,
    last: Tail,
}

struct Tail {
    center: f64,
    value: f64,
    slope: f64,
    curvature: f64,
}

impl Tail {
    fn at(&self, x: f64) -> f64 {
        let u = x - self.center;
        self.value + self.slope * u + self.curvature * u * u
    }
}

impl Profile {
    fn new(bins: &[BinSummary]) -> Self {
        // Coincident centres (heavily tied samples) are merged.
        let mut centers: Vec<f64> = Vec::with_capacity(bins.len());
        let mut values: Vec<f64> = Vec::with_capacity(bins.len());
        let mut counts: Vec<f64> = Vec::with_capacity(bins.len());
        for b in bins {
            match centers.last() {
                Some(&c) if c >= b.center => {
                    let k = values.len() - 1;
                    values[k] = (values[k] * counts[k] + b.y_hat) / (counts[k] + 1.0);
                    counts[k] += 1.0;
                }
                _ => {
                    centers.push(b.center);
                    values.push(b.y_hat);
                    counts.push(1.0);
                }
            }
        }
        let n = centers.len();
        let tail = |b: &BinSummary, center: f64, value: f64| Tail {
            center,
            value,
            slope: b.slope,
            curvature: b.curvature,
        };
        Profile {
            first: tail(&bins[0], centers[0], values[0]),
            last: tail(&bins[bins.len() - 1], centers[n - 1], values[n - 1]),
            inner: Pchip::new(centers, values),
        }
    }

    fn at(&self, x: f64) -> f64 {
        match &self.inner {
            _ if x < self.first.center => self.first.at(x),
            _ if x > self.last.center => self.last.at(x),
            Some(p) => p.eval(x),
            None => self.first.value,
        }
    }
}

impl Continuation<'_> {
    fn at(&self, x: f64) -> Result<f64> {
        match self {
            Continuation::Terminal(p) => p.terminal_value(x),
            Continuation::Bins(profile) => Ok(profile.at(x)),
        }
    }

    /// Regresses the continuation at `X_{i+1} + shift` on `X_i - xbar`, its
    /// centred square and `dW_i` within one bin. Returns the fit at the bin
    /// centre with `dW_i = 0` (its conditional mean), the `dW` coefficient
    /// (the `Z` estimate) and the remaining fit coefficients.
    ///
    /// The quadratic term keeps the centre value free of the `u_xx Var(X_i)/2`
    /// bias a plain bin mean would add at every step.
    fn regress(&self, m: &[usize], xs: &[f64], x_next: &[f64], dw: &[f64], shift: f64) -> Result<(f64, f64, Fit)> {
        let cnt = m.len() as f64;
        let vals: Vec<f64> = m.iter().map(|&k| self.at(x_next[k] + shift)).collect::<Result<_>>()?;
        let mv = vals.iter().sum::<f64>() / cnt;
        let mx = m.iter().map(|&k| xs[k]).sum::<f64>() / cnt;
        let mw = m.iter().map(|&k| dw[k]).sum::<f64>() / cnt;
        let m2 = m.iter().map(|&k| (xs[k] - mx).powi(2)).sum::<f64>() / cnt;
        let cols = |k: usize| {
            let u = xs[k] - mx;
            [dw[k] - mw, u, u * u - m2]
        };
        let mut gram = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for (&k, v) in m.iter().zip(&vals) {
            let c = cols(k);
            for a in 0..3 {
                rhs[a] += c[a] * (v - mv);
                for b in 0..3 {
                    gram[a][b] += c[a] * c[b];
                }
            }
        }
        // Drop trailing regressors until the system is well conditioned.
        let mut coef = [0.0; 3];
        for used in (1..=3).rev() {
            if let Some(c) = solve_spd(&gram, &rhs, used) {
                coef[..used].copy_from_slice(&c[..used]);
                break;
            }
        }
        let [gamma, beta, delta] = coef;
        let rss = m
            .iter()
            .zip(&vals)
            .map(|(&k, v)| {
                let c = cols(k);
                (v - mv - gamma * c[0] - beta * c[1] - delta * c[2]).powi(2)
            })
            .sum::<f64>();
        Ok((
            mv - gamma * mw - delta * m2,
            gamma,
            Fit {
                rss,
                slope: beta,
                curvature: delta,
            },
        ))
    }
}

/// Cholesky solve of the leading `n x n` block; `None` when a pivot is
/// negligible relative to its diagonal entry.
fn solve_spd(a: &[[f64; 3]; 3], b: &[f64; 3], n: usize) -> Option<[f64; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 1e-10 * a[i][i]) || a[i][i] <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Central difference of `f` in `z`.
fn driver_slope(p: &ProblemSpec, t: f64, x: f64, y: f64, z: f64) -> f64 {
    let h = 1e-6 * (1.0 + z.abs());
    let d = (p.generator_value(t, x, y, z + h) - p.generator_value(t, x, y, z - h)) / (2.0 * h);
    if d.is_finite() {
        d
    } else {
        0.0
    }
}

struct Level {
    bins: QuantileBins,
    centers: Vec<f64>,
}

fn level(xs: &[f64], basis: &RegressionBasis, knot: usize) -> Result<Level> {
    let bins = QuantileBins::build(xs, basis.bins);
    if bins.len() > 1 && bins.min_count() < basis.min_paths_per_bin {
        return Err(Error::Occupancy {
            knot,
            count: bins.min_count(),
            floor: basis.min_paths_per_bin,
        });
    }
    let centers = bins
        .iter()
        .map(|m| m.iter().map(|&k| xs[k]).sum::<f64>() / m.len() as f64)
        .collect();
    Ok(Level { bins, centers })
}

fn bin_stats(level: &Level, y: &[f64], z: &[f64], realized: &[f64], fits: &[Fit]) -> Vec<BinSummary> {
    level
        .bins
        .iter()
        .zip(&level.centers)
        .enumerate()
        .map(|(b, (m, &center))| {
            let r: Vec<f64> = m.iter().map(|&k| realized[k]).collect();
            let n = m.len() as f64;
            BinSummary {
                center,
                y_hat: m.iter().map(|&k| y[k]).sum::<f64>() / n,
                z_hat: if z.is_empty() { 0.0 } else { m.iter().map(|&k| z[k]).sum::<f64>() / n },
                count: m.len(),
                se: std_dev(&r) / n.sqrt(),
                slope: fits.get(b).map_or(0.0, |f| f.slope),
                curvature: fits.get(b).map_or(0.0, |f| f.curvature),
            }
        })
        .collect()
}

pub fn solve_mc(p: &ProblemSpec, ens: &PathEnsemble, cfg: &McConfig) -> Result<BackwardSolution> {
    cfg.basis.validate()?;
    if (ens.grid.horizon - p.horizon()).abs() > 1e-12 * p.horizon() {
        return Err(Error::InvalidArgument(format!(
            "ensemble horizon {} differs from the problem's {}",
            ens.grid.horizon,
            p.horizon()
        )));
    }
    if let Some(bp) = &cfg.truncation {
        if bp.kind != BoundKind::ZTemporal {
            return Err(Error::Kind {
                expected: BoundKind::ZTemporal.name().into(),
                found: bp.kind.name().into(),
            });
        }
    }
    if let Some(bp) = &cfg.divergence_guard {
        if bp.kind != BoundKind::YGrowth {
            return Err(Error::Kind {
                expected: BoundKind::YGrowth.name().into(),
                found: bp.kind.name().into(),
            });
        }
    }

    let n = ens.n_paths;
    let steps = ens.grid.steps;
    let dt = ens.grid.dt();

    let x_n = ens.states_at(steps);
    let g_n: Vec<f64> = x_n.iter().map(|&x| p.terminal_value(x)).collect::<Result<_>>()?;
    let mut y_next = g_n.clone();
    let mut realized = g_n.clone();
    let terminal_level = level(&x_n, &cfg.basis, steps)?;
    let mut next_bins = bin_stats(&terminal_level, &y_next, &[], &realized, &[]);

    let mut knots_rev = vec![KnotData {
        t: ens.grid.t(steps),
        bins: next_bins.clone(),
        clip_fraction: 0.0,
        residual_rms: 0.0,
        y: if cfg.keep_paths { y_next.clone() } else { Vec::new() },
        z: Vec::new(),
        realized: if cfg.keep_paths { realized.clone() } else { Vec::new() },
    }];

    for i in (0..steps).rev() {
        let t = ens.grid.t(i);
        let xs = ens.states_at(i);
        let x_next = ens.states_at(i + 1);
        let dw = ens.increments_at(i);
        let lvl = level(&xs, &cfg.basis, i)?;

        let sigma = p.forward.sigma_at(t);
        let cont = if i + 1 == steps {
            Continuation::Terminal(p)
        } else {
            Continuation::Bins(Profile::new(&next_bins))
        };

        let members: Vec<&[usize]> = lvl.bins.iter().collect();
        let per_bin: Vec<BinStep> = members
            .par_iter()
            .zip(lvl.centers.par_iter())
            .map(|(m, &center)| -> Result<BinStep> {
                let (ey0, z0, fit0) = cont.regress(m, &xs, &x_next, &dw, 0.0)?;
                let mut c = 0.0;
                if cfg.drift_shift {
                    let inside = match &cfg.truncation {
                        Some(bp) => z0.abs() <= bp.eval(t, center)?,
                        None => true,
                    };
                    if inside {
                        c = driver_slope(p, t, center, ey0, z0);
                    }
                }
                let (ey, z, fit) = if c == 0.0 {
                    (ey0, z0, fit0)
                } else {
                    cont.regress(m, &xs, &x_next, &dw, sigma * c * dt)?
                };
                Ok(BinStep { ey, z, c, fit })
            })
            .collect::<Result<_>>()?;

        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut clipped = 0usize;
        let mut ss_total = 0.0;
        for (b, m) in lvl.bins.iter().enumerate() {
            let BinStep { ey, z: z_bin, c, fit } = per_bin[b];
            ss_total += fit.rss;
            for &k in m {
                let mut zk = z_bin;
                if let Some(bp) = &cfg.truncation {
                    let env = bp.eval(t, xs[k])?;
                    if zk.abs() > env {
                        zk = env.copysign(zk);
                        clipped += 1;
                    }
                }
                let f = p.generator_value(t, xs[k], ey, zk);
                // The shift already carried dt*c*Z into the continuation value.
                y[k] = ey + dt * (f - c * z_bin);
                z[k] = zk;
                realized[k] += dt * f;
            }
        }

        for k in 0..n {
            let limit = match &cfg.divergence_guard {
                Some(bp) => 10.0 * bp.eval(t, xs[k])?,
                None => f64::INFINITY,
            };
            if !(y[k].abs() <= limit) {
                return Err(Error::Divergence {
                    knot: i,
                    value: y[k].abs(),
                    limit,
                });
            }
        }

        let fits: Vec<Fit> = per_bin.iter().map(|b| b.fit).collect();
        next_bins = bin_stats(&lvl, &y, &z, &realized, &fits);
        knots_rev.push(KnotData {
            t,
            bins: next_bins.clone(),
            clip_fraction: clipped as f64 / n as f64,
            residual_rms: (ss_total / n as f64).sqrt(),
            y: if cfg.keep_paths { y.clone() } else { Vec::new() },
            z: if cfg.keep_paths { z } else { Vec::new() },
            realized: if cfg.keep_paths { realized.clone() } else { Vec::new() },
        });
        y_next = y;
    }

    knots_rev.reverse();
    Ok(BackwardSolution {
        knots: knots_rev,
        y0: mean(&y_next),
        y0_se: std_dev(&realized) / (n as f64).sqrt(),
        dt,
        truncation: cfg.truncation.clone(),
        n_paths: n,
        realized0: realized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    /// `T - t` at each probe, decreasing.
    pub taus: Vec<f64>,
    /// Mean `|Y_t - g(X_T)|` at each probe.
    pub gaps: Vec<f64>,
    /// Log-log slope of gap against `T - t`, when a fit was possible.
    pub fitted_exponent: Option<f64>,
    pub monotone_tail: bool,
    pub passed: bool,
    pub fit_error: Option<String>,
}

/// Mean distance between `Y` at the probe knots and the realised terminal value.
pub fn terminal_continuity_probe(
    p: &ProblemSpec,
    ens: &PathEnsemble,
    sol: &BackwardSolution,
    probe_knots: &[usize],
) -> Result<ContinuityReport> {
    let steps = ens.grid.steps;
    let g: Vec<f64> = ens
        .terminal_states()
        .iter()
        .map(|&x| p.terminal_value(x))
        .collect::<Result<_>>()?;
    let mut probes: Vec<usize> = probe_knots.iter().copied().filter(|&k| k < steps).collect();
    probes.sort_unstable();
    probes.dedup();
    if probes.len() < 4 {
        return Err(Error::InsufficientData(format!("need 4 probe knots before T, got {}", probes.len())));
    }
    let mut taus = Vec::new();
    let mut gaps = Vec::new();
    for &k in &probes {
        let ys = &sol.knots[k].y;
        if ys.len() != g.len() {
            return Err(Error::InsufficientData("solution was computed without pathwise values".into()));
        }
        taus.push(ens.grid.horizon - ens.grid.t(k));
        gaps.push(ys.iter().zip(&g).map(|(y, gv)| (y - gv).abs()).sum::<f64>() / g.len() as f64);
    }
    let tail = &gaps[gaps.len() - 4..];
    let monotone_tail = tail.windows(2).all(|w| w[1] < w[0]);
    let positive: Vec<(f64, f64)> = taus
        .iter()
        .zip(&gaps)
        .filter(|(_, &g)| g > 0.0)
        .map(|(&t, &g)| (t.ln(), g.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
    let fit = fit_line(&xs, &ys);
    let fit_error = if !monotone_tail {
        Some("gap is not monotone over the last four probes".to_string())
    } else if fit.is_none() {
        Some("not enough positive gaps to fit a decay".to_string())
    } else {
        None
    };
    Ok(ContinuityReport {
        taus,
        gaps,
        fitted_exponent: fit.map(|f| f.slope),
        monotone_tail,
        passed: monotone_tail,
        fit_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate, TimeGrid};
    use crate::problem::{DriftSpec, ForwardModel, GeneratorSpec, GrowthParams, TerminalSpec};

    fn problem(generator: GeneratorSpec, terminal: TerminalSpec, x0: f64, sigma: f64) -> ProblemSpec {
        ProblemSpec::new(
            "mc",
            ForwardModel::scalar(x0, 1.0, DriftSpec::Zero, sigma),
            generator,
            terminal,
            GrowthParams::with_l(2.0),
        )
    }

    fn run(p: &ProblemSpec, n: usize, steps: usize, bins: usize, seed: u64) -> BackwardSolution {
        let ens = simulate(&p.forward, TimeGrid::new(p.horizon(), steps).unwrap(), n, seed).unwrap();
        solve_mc(p, &ens, &McConfig::new(bins)).unwrap()
    }

    #[test]
    fn martingale_terminal() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 0.3, 1.0);
        let s = run(&p, 20_000, 20, 20, 1);
        assert!((s.y0 - 0.3).abs() <= 3.0 * s.y0_se, "{} +- {}", s.y0, s.y0_se);
    }

    #[test]
    fn quadratic_terminal_heat_moment() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::power(1.0, 2.0), 0.5, 1.0);
        let s = run(&p, 20_000, 20, 20, 2);
        assert!((s.y0 - 1.25).abs() <= 3.0 * s.y0_se, "{} +- {}", s.y0, s.y0_se);
    }

    #[test]
    fn terminal_knot_is_pathwise_g() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::power(1.0, 2.0), 0.0, 1.0);
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 5).unwrap(), 1000, 3).unwrap();
        let s = solve_mc(&p, &ens, &McConfig::new(5)).unwrap();
        let last = s.knots.last().unwrap();
        for (k, &x) in ens.terminal_states().iter().enumerate() {
            assert!((last.y[k] - x * x).abs() <= 1e-12 * (1.0 + x * x));
        }
        assert!(s.knots.iter().flat_map(|k| k.y.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn occupancy_floor_is_enforced() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 0.0, 1.0);
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 4).unwrap(), 500, 0).unwrap();
        assert!(matches!(solve_mc(&p, &ens, &McConfig::new(20)), Err(Error::Occupancy { .. })));
        assert!(solve_mc(&p, &ens, &McConfig::new(1)).is_err());
    }

    #[test]
    fn divergence_guard_trips() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 0.0, 1.0);
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 10).unwrap(), 2000, 0).unwrap();
        let mut cfg = McConfig::new(10);
        cfg.divergence_guard = Some(BoundParams::new(BoundKind::YGrowth, &p.growth, 1.0).with_c(0.01));
        assert!(matches!(solve_mc(&p, &ens, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn truncation_clips_and_is_reported() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 0.0, 1.0);
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 10).unwrap(), 2000, 0).unwrap();
        let mut cfg = McConfig::new(10);
        cfg.truncation = Some(BoundParams::new(BoundKind::ZTemporal, &p.growth, 1.0).with_c(0.5));
        let s = solve_mc(&p, &ens, &cfg).unwrap();
        assert!(s.max_clip_fraction() > 0.5);
        assert!(s.y0 < 8.0);
    }

    #[test]
    fn degenerate_noise_follows_the_ode() {
        // sigma = 0: Y_t = g(x0) + (T - t) f(0) with f = 1 + |z|^3 and z = 0.
        let mut gen = GeneratorSpec::power_z(1.0, 3.0);
        if let crate::problem::GeneratorFamily::Power { c0, .. } = &mut gen.family {
            *c0 = 1.0;
        }
        let p = problem(gen, TerminalSpec::linear(2.0, 0.0), 0.5, 0.0);
        let s = run(&p, 200, 10, 4, 4);
        assert!((s.y0 - 2.0).abs() < 1e-12);
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 10).unwrap(), 200, 4).unwrap();
        let r = terminal_continuity_probe(&p, &ens, &s, &[5, 6, 7, 8, 9]).unwrap();
        assert!(r.passed);
        assert!((r.gaps[4] - 0.1).abs() < 1e-12);
        assert!(r.fitted_exponent.map(|e| (e - 1.0).abs() < 1e-9).unwrap_or(false));
    }

    #[test]
    fn csv_has_one_row_per_bin_and_knot() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0), 0.0, 1.0);
        let s = run(&p, 1000, 4, 5, 5);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Knot 0 has a single bin since every path starts at x0.
        assert_eq!(text.lines().count(), 1 + 1 + 4 * 5);
    }

    #[test]
    fn identical_inputs_are_bit_identical() {
        let p = problem(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), 0.0, 1.0);
        let a = run(&p, 4000, 10, 10, 9);
        let b = run(&p, 4000, 10, 10, 9);
        assert_eq!(a, b);
    }
}
