//! Sampled checkers for the structural assumptions on `b`, `sigma`, `f`, `g`.
//!
//! Each checker draws points (pairs of points for increment conditions) from
//! a box with a deterministic per-sample stream, evaluates `lhs <= rhs` with
//! the constants declared in the problem, and keeps the whole sample set so
//! a verdict can be recomputed later.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::path_rng;
use crate::numerics::abs_pow;
use crate::problem::{Assumption, ProblemSpec};

/// Gradients are not taken within this distance of `z = 0`.
pub const KINK_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub t: [f64; 2],
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl SamplingBox {
    /// `[0,T] x [x0-5, x0+5] x [-10,10] x [-10,10]`.
    pub fn around(p: &ProblemSpec) -> Self {
        let x0 = p.forward.x0.first().copied().unwrap_or(0.0);
        SamplingBox {
            t: [0.0, p.horizon()],
            x: [x0 - 5.0, x0 + 5.0],
            y: [-10.0, 10.0],
            z: [-10.0, 10.0],
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("t", self.t), ("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("box.{name}"), format!("invalid range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// One sampled point; the primed coordinates are the second point of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: f64,
    pub x2: f64,
    pub y: f64,
    pub y2: f64,
    pub z: f64,
    pub z2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: SamplePoint,
    pub lhs: f64,
    pub rhs: f64,
}

impl Evaluation {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.margin() >= -1e-6 * (1.0 + self.lhs.abs() + self.rhs.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub assumption: Assumption,
    pub passed: bool,
    pub worst_margin: f64,
    /// Sample attaining the worst margin.
    pub witness: Option<Evaluation>,
    pub n_checked: usize,
    /// Samples skipped inside the kink ball around `z = 0`.
    pub n_excluded: usize,
    pub samples: Vec<Evaluation>,
}

impl AssumptionReport {
    /// Recomputes every stored inequality; true iff the stored verdict is reproduced.
    pub fn reverify(&self, p: &ProblemSpec) -> Result<bool> {
        let mut all = true;
        for s in &self.samples {
            match evaluate(p, self.assumption, &s.point)? {
                Some(e) if e.lhs == s.lhs && e.rhs == s.rhs => all &= e.holds(),
                _ => return Ok(false),
            }
        }
        Ok(all == self.passed)
    }
}

fn draw(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn central(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    let h = 1e-5 * (1.0 + at.abs());
    (f(at + h) - f(at - h)) / (2.0 * h)
}

/// Worst of several `(lhs, rhs)` pairs.
fn worst(point: SamplePoint, parts: &[(f64, f64)]) -> Evaluation {
    parts
        .iter()
        .map(|&(lhs, rhs)| Evaluation { point, lhs, rhs })
        .min_by(|a, b| a.margin().total_cmp(&b.margin()))
        .expect("at least one inequality")
}

/// Evaluates the assumption at one point; `None` when the point is excluded.
pub fn evaluate(p: &ProblemSpec, which: Assumption, s: &SamplePoint) -> Result<Option<Evaluation>> {
    let g = &p.growth;
    let c = g.c_growth;
    let fwd = &p.forward;
    let f = |t: f64, x: f64, y: f64, z: f64| p.generator_value(t, x, y, z);
    let ev = match which {
        Assumption::F1 => {
            let b0 = fwd.drift_at(s.t, 0.0).abs();
            let inc = (fwd.drift_at(s.t, s.x) - fwd.drift_at(s.t, s.x2)).abs();
            let lip = fwd.k_b * (1.0 + 1e-9) * (s.x - s.x2).abs();
            worst(*s, &[(b0, c), (inc, lip)])
        }
        Assumption::F2 => {
            let sigma = fwd.sigma_at(s.t);
            let b_x = central(|x| fwd.drift_at(s.t, x), s.x);
            let horizon = p.horizon();
            let ht = 1e-5 * (1.0 + s.t.abs());
            let (ta, tb) = ((s.t - ht).max(0.0), (s.t + ht).min(horizon));
            let sigma_t = if tb > ta {
                (fwd.sigma_at(tb) - fwd.sigma_at(ta)) / (tb - ta)
            } else {
                0.0
            };
            let lhs = (sigma * (sigma * b_x - sigma_t)).abs();
            worst(*s, &[(lhs, fwd.lambda_f2 * sigma * sigma)])
        }
        Assumption::B1 => {
            let delta = g.delta.unwrap_or(g.delta_bar);
            let gamma = g.gamma.unwrap_or(g.gamma_bar);
            let beta = g.beta.unwrap_or(g.beta_bar);
            let l = g.l;
            let ya = (f(s.t, s.x, s.y, s.z) - f(s.t, s.x, s.y2, s.z)).abs();
            let za = (f(s.t, s.x, s.y, s.z) - f(s.t, s.x, s.y, s.z2)).abs();
            let xa = (f(s.t, s.x, s.y, s.z) - f(s.t, s.x2, s.y, s.z)).abs();
            worst(
                *s,
                &[
                    (ya, delta * (s.y - s.y2).abs()),
                    (za, (c + 0.5 * gamma * (abs_pow(s.z, l) + abs_pow(s.z2, l))) * (s.z - s.z2).abs()),
                    (xa, (c + 0.5 * beta * (abs_pow(s.x, g.r_f) + abs_pow(s.x2, g.r_f))) * (s.x - s.x2).abs()),
                ],
            )
        }
        Assumption::B2a | Assumption::B2b | Assumption::B2c => {
            let v = f(s.t, s.x, s.y, s.z);
            let base = c + g.beta_bar * abs_pow(s.x, g.r_f + 1.0) + g.delta_bar * s.y.abs();
            let upper = base + g.gamma_bar * abs_pow(s.z, g.l + 1.0);
            match which {
                Assumption::B2a => worst(*s, &[(v.abs(), upper)]),
                Assumption::B2b => {
                    let lower = -base - g.gamma_bar * abs_pow(s.z, g.eta);
                    worst(*s, &[(v, upper), (lower, v)])
                }
                _ => {
                    let lower = -base + g.epsilon * abs_pow(s.z, g.l + 1.0);
                    worst(*s, &[(v, upper), (lower, v)])
                }
            }
        }
        Assumption::B3 => {
            if s.z.abs() < KINK_RADIUS {
                return Ok(None);
            }
            let grad = central(|z| f(s.t, s.x, s.y, z), s.z);
            if !grad.is_finite() {
                return Err(Error::Gradient(format!(
                    "d/dz f at (t,x,y,z)=({},{},{},{})",
                    s.t, s.x, s.y, s.z
                )));
            }
            let lhs = f(s.t, s.x, s.y, s.z) - grad * s.z;
            worst(*s, &[(lhs, c - g.epsilon * abs_pow(s.z, g.l + 1.0))])
        }
        Assumption::TC1 => {
            let alpha = g.alpha.unwrap_or(g.alpha_bar);
            let lhs = (p.terminal_value(s.x)? - p.terminal_value(s.x2)?).abs();
            let rhs = (c + 0.5 * alpha * (abs_pow(s.x, g.r_g) + abs_pow(s.x2, g.r_g))) * (s.x - s.x2).abs();
            worst(*s, &[(lhs, rhs)])
        }
        Assumption::TC2 => {
            let lhs = p.terminal_value(s.x)?.abs();
            worst(*s, &[(lhs, c + g.alpha_bar * abs_pow(s.x, g.p_g))])
        }
    };
    Ok(Some(ev))
}

/// Samples `n_samples` points of `bx` and checks the inequality of `which`.
pub fn check_assumption(
    p: &ProblemSpec,
    which: Assumption,
    bx: &SamplingBox,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    bx.validate()?;
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!("n_samples = {n_samples} must be at least 1000")));
    }
    let results: Vec<Option<Evaluation>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let point = SamplePoint {
                t: draw(&mut rng, bx.t),
                x: draw(&mut rng, bx.x),
                x2: draw(&mut rng, bx.x),
                y: draw(&mut rng, bx.y),
                y2: draw(&mut rng, bx.y),
                z: draw(&mut rng, bx.z),
                z2: draw(&mut rng, bx.z),
            };
            evaluate(p, which, &point)
        })
        .collect::<Result<_>>()?;

    let n_excluded = results.iter().filter(|r| r.is_none()).count();
    let samples: Vec<Evaluation> = results.into_iter().flatten().collect();
    let witness = samples
        .iter()
        .min_by(|a, b| a.margin().total_cmp(&b.margin()))
        .copied();
    let passed = samples.iter().all(Evaluation::holds);
    Ok(AssumptionReport {
        assumption: which,
        passed,
        worst_margin: witness.map(|w| w.margin()).unwrap_or(f64::INFINITY),
        witness,
        n_checked: samples.len(),
        n_excluded,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{DriftSpec, ForwardModel, GeneratorFamily, GeneratorSpec, GrowthParams, TerminalSpec};

    fn cube_problem() -> ProblemSpec {
        let mut g = GrowthParams::with_l(2.0);
        // One epsilon serves both the lower growth bound (needs <= 1) and B3 (needs <= 2).
        g.epsilon = 1.0;
        g.gamma_bar = 1.0;
        g.gamma = Some(3.0);
        g.delta = Some(0.0);
        g.beta = Some(0.0);
        g.c_growth = 0.0;
        ProblemSpec::new(
            "cube",
            ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
            GeneratorSpec::power_z(1.0, 3.0),
            TerminalSpec::linear(2.0, 0.0),
            g,
        )
    }

    #[test]
    fn cube_margin_identity() {
        let p = cube_problem();
        let r = check_assumption(&p, Assumption::B3, &SamplingBox::around(&p), 2000, 1).unwrap();
        assert!(r.passed);
        for s in &r.samples {
            let exact = -2.0 * s.point.z.abs().powi(3);
            assert!((s.lhs - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{} vs {exact}", s.lhs);
        }
        assert!(r.reverify(&p).unwrap());
    }

    #[test]
    fn cube_passes_the_generator_conditions() {
        let p = cube_problem();
        let bx = SamplingBox::around(&p);
        for a in [Assumption::B1, Assumption::B2a, Assumption::B2b, Assumption::B2c] {
            let r = check_assumption(&p, a, &bx, 1000, 2).unwrap();
            assert!(r.passed, "{a:?} worst {:?}", r.witness);
        }
    }

    #[test]
    fn perturbed_family_passes_b3() {
        let mut p = cube_problem();
        p.growth.eta = 1.0;
        p.growth.epsilon = 1.0;
        p.growth.c_growth = 3.0;
        p.generator = GeneratorSpec::new(GeneratorFamily::Perturbed { c: 1.0 });
        let r = check_assumption(&p, Assumption::B3, &SamplingBox::around(&p), 5000, 3).unwrap();
        assert!(r.passed, "{:?}", r.witness);
    }

    #[test]
    fn growth_mismatch_fails_with_witness() {
        let mut p = cube_problem();
        p.terminal = TerminalSpec::power(1.0, 2.0);
        p.growth.p_g = 0.5;
        p.growth.alpha_bar = 1.0;
        p.growth.c_growth = 1.0;
        let r = check_assumption(&p, Assumption::TC2, &SamplingBox::around(&p), 1000, 4).unwrap();
        assert!(!r.passed);
        let w = r.witness.unwrap();
        assert!(w.point.x.abs() > 1.5 && w.margin() < 0.0);
        assert!(r.reverify(&p).unwrap());
    }

    #[test]
    fn drift_lipschitz_constant_is_audited() {
        let mut p = cube_problem();
        p.forward = ForwardModel::scalar(0.0, 1.0, DriftSpec::Linear { intercept: 0.5, slope: -2.0 }, 1.0);
        p.growth.c_growth = 1.0;
        let bx = SamplingBox::around(&p);
        assert!(check_assumption(&p, Assumption::F1, &bx, 1000, 5).unwrap().passed);
        p.forward.k_b = 1.5;
        assert!(!check_assumption(&p, Assumption::F1, &bx, 1000, 5).unwrap().passed);
        p.forward.lambda_f2 = 2.0;
        assert!(check_assumption(&p, Assumption::F2, &bx, 1000, 5).unwrap().passed);
        p.forward.lambda_f2 = 1.0;
        assert!(!check_assumption(&p, Assumption::F2, &bx, 1000, 5).unwrap().passed);
    }

    #[test]
    fn kink_ball_is_excluded_and_reported() {
        let p = cube_problem();
        let bx = SamplingBox {
            z: [-1e-7, 1e-7],
            ..SamplingBox::around(&p)
        };
        let r = check_assumption(&p, Assumption::B3, &bx, 1000, 6).unwrap();
        assert_eq!(r.n_excluded, 1000);
        assert_eq!(r.n_checked, 0);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let p = cube_problem();
        assert!(check_assumption(&p, Assumption::B3, &SamplingBox::around(&p), 10, 0).is_err());
    }

    #[test]
    fn samples_are_deterministic() {
        let p = cube_problem();
        let bx = SamplingBox::around(&p);
        let a = check_assumption(&p, Assumption::B2c, &bx, 1000, 9).unwrap();
        let b = check_assumption(&p, Assumption::B2c, &bx, 1000, 9).unwrap();
        assert_eq!(a, b);
    }
}
