//! Experiment harness: binds the solvers and envelopes into checkable claims.
//!
//! Every runner returns a [`VerificationReport`] whose pass/fail flag can be
//! recomputed from its `statistics`, `tolerances` and `series`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::calibrate::{observed, Interior};
use crate::bounds::{BoundKind, BoundParams, SamplingBox};
use crate::error::{Error, Result};
use crate::forward::{path_rng, simulate, PathEnsemble, TimeGrid};
use crate::mcsolver::{solve_mc, terminal_continuity_probe, BackwardSolution, McConfig};
use crate::numerics::std_dev;
use crate::pde::{extract_rate_near_t, solve_pde, PdeConfig, ValueField};
use crate::problem::{ProblemSpec, TerminalFamily, TerminalSpec};
use crate::supconv::{admissible_n0, AdmissibilityBox, SupConvConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Comparison,
    YEnvelope,
    ZEnvelope,
    ZIntegral,
    SupconvMonotone,
    BlowupRate,
    TerminalContinuity,
    TruncationInertness,
}

impl Claim {
    pub fn name(self) -> &'static str {
        match self {
            Claim::Comparison => "comparison",
            Claim::YEnvelope => "y_envelope",
            Claim::ZEnvelope => "z_envelope",
            Claim::ZIntegral => "z_integral",
            Claim::SupconvMonotone => "supconv_monotone",
            Claim::BlowupRate => "blowup_rate",
            Claim::TerminalContinuity => "terminal_continuity",
            Claim::TruncationInertness => "truncation_inertness",
        }
    }

    fn arity(self) -> usize {
        if self == Claim::Comparison {
            2
        } else {
            1
        }
    }

    fn envelope_kind(self) -> Option<BoundKind> {
        match self {
            Claim::YEnvelope => Some(BoundKind::YGrowth),
            Claim::ZEnvelope | Claim::TruncationInertness => Some(BoundKind::ZTemporal),
            Claim::ZIntegral => Some(BoundKind::ZIntegral),
            _ => None,
        }
    }
}

/// Monte Carlo and PDE resolution of one sweep point. A zero count disables
/// the corresponding solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    #[serde(default)]
    pub n_paths: usize,
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub n_x: usize,
    #[serde(default)]
    pub n_t: usize,
}

fn default_bins() -> usize {
    40
}

impl Resolution {
    pub fn mc(n_paths: usize, steps: usize, bins: usize) -> Self {
        Resolution {
            n_paths,
            steps,
            bins,
            n_x: 0,
            n_t: 0,
        }
    }

    pub fn pde(n_x: usize, n_t: usize) -> Self {
        Resolution {
            n_paths: 0,
            steps: 0,
            bins: default_bins(),
            n_x,
            n_t,
        }
    }

    pub fn with_pde(mut self, n_x: usize, n_t: usize) -> Self {
        self.n_x = n_x;
        self.n_t = n_t;
        self
    }

    fn has_mc(&self) -> bool {
        self.n_paths > 0 && self.steps > 0
    }

    fn has_pde(&self) -> bool {
        self.n_x > 0 && self.n_t > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerance {
    /// Multiple of the standard error allowed for Monte Carlo claims.
    pub se_multiple: f64,
    /// Absolute slack for ordering claims on PDE grids.
    pub grid_tol: f64,
    /// Relative slack for Monte Carlo against PDE values.
    pub relative: f64,
    /// Slack below the envelope exponent `-1/(l+1)` for rate fits.
    pub rate_slack: f64,
    /// Minimum `R^2` of a rate fit.
    pub min_r_squared: f64,
    /// Allowed fraction of Monte Carlo bins above an envelope.
    pub mc_bin_fraction: f64,
    /// Allowed relative drift of the envelope utilisation across the sweep.
    pub stability: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            se_multiple: 3.0,
            grid_tol: 1e-6,
            relative: 0.02,
            rate_slack: 0.15,
            min_r_squared: 0.9,
            mc_bin_fraction: 0.01,
            stability: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub claim: Claim,
    pub problems: Vec<ProblemSpec>,
    pub resolutions: Vec<Resolution>,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub seed: u64,
    /// Envelope audited or used for truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<BoundParams>,
    /// Penalty slopes of a sup-convolution ladder.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<f64>,
    #[serde(default = "default_ladder_step")]
    pub ladder_grid_step: f64,
    /// `T - t` window of a rate fit.
    #[serde(default = "default_window")]
    pub rate_window: (f64, f64),
    /// Half-width of the PDE domain in units of `sigma sqrt(T)`.
    #[serde(default = "default_domain")]
    pub domain_k: f64,
    #[serde(default = "default_dominance_samples")]
    pub dominance_samples: usize,
}

fn default_ladder_step() -> f64 {
    1e-3
}

fn default_window() -> (f64, f64) {
    (0.01, 0.3)
}

fn default_domain() -> f64 {
    6.0
}

fn default_dominance_samples() -> usize {
    4000
}

impl ExperimentPlan {
    pub fn new(claim: Claim, problems: Vec<ProblemSpec>, resolutions: Vec<Resolution>, seed: u64) -> Self {
        ExperimentPlan {
            claim,
            problems,
            resolutions,
            tolerance: Tolerance::default(),
            seed,
            envelope: None,
            ladder: Vec::new(),
            ladder_grid_step: default_ladder_step(),
            rate_window: default_window(),
            domain_k: default_domain(),
            dominance_samples: default_dominance_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.problems.len() != self.claim.arity() {
            return Err(Error::config(
                "plan.problems",
                format!("{} needs {} problem(s), got {}", self.claim.name(), self.claim.arity(), self.problems.len()),
            ));
        }
        if self.resolutions.is_empty() {
            return Err(Error::config("plan.resolutions", "at least one resolution is required"));
        }
        for p in &self.problems {
            p.validate()?;
        }
        if let Some(kind) = self.claim.envelope_kind() {
            match &self.envelope {
                Some(bp) if bp.kind == kind => bp.validate()?,
                Some(bp) => {
                    return Err(Error::Kind {
                        expected: kind.name().into(),
                        found: bp.kind.name().into(),
                    })
                }
                None => return Err(Error::config("plan.envelope", format!("{} needs an envelope", self.claim.name()))),
            }
        }
        if self.claim == Claim::SupconvMonotone && self.ladder.len() < 2 {
            return Err(Error::config("plan.ladder", "a ladder needs at least two slopes"));
        }
        Ok(())
    }
}

/// Named curve for plot-ready long-format output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    fn new(name: impl Into<String>) -> Self {
        Series {
            name: name.into(),
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    fn push(&mut self, x: f64, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim: Claim,
    pub passed: bool,
    pub statistics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
    /// Filled in by whoever persists the report.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl VerificationReport {
    fn new(claim: Claim) -> Self {
        VerificationReport {
            claim,
            passed: true,
            statistics: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            series: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    fn stat(&mut self, key: impl Into<String>, v: f64) {
        self.statistics.insert(key.into(), v);
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(format!("failed: {}", what.into()));
        }
    }
}

fn pde_config(p: &ProblemSpec, plan: &ExperimentPlan, r: &Resolution) -> Result<PdeConfig> {
    let mut cfg = PdeConfig::auto_domain(p, plan.domain_k, r.n_x, r.n_t)?;
    // Keep roughly 400 levels regardless of n_t.
    cfg.store_stride = (r.n_t / 400).max(1);
    Ok(cfg)
}

fn ensemble(p: &ProblemSpec, r: &Resolution, seed: u64) -> Result<PathEnsemble> {
    simulate(&p.forward, TimeGrid::new(p.horizon(), r.steps)?, r.n_paths, seed)
}

/// Runs the plan's claim.
pub fn run_plan(plan: &ExperimentPlan) -> Result<VerificationReport> {
    plan.validate()?;
    let p = &plan.problems[0];
    match plan.claim {
        Claim::Comparison => run_comparison(p, &plan.problems[1], plan),
        Claim::YEnvelope | Claim::ZEnvelope | Claim::ZIntegral => {
            run_envelope_audit(p, plan.envelope.as_ref().expect("validated"), plan)
        }
        Claim::SupconvMonotone => run_supconv_ladder(p, &plan.ladder, plan),
        Claim::BlowupRate => run_blowup_rate(p, plan),
        Claim::TerminalContinuity => run_terminal_continuity(p, plan),
        Claim::TruncationInertness => run_truncation_inertness(p, plan.envelope.as_ref().expect("validated"), plan),
    }
}

/// Samples `g1 <= g2` and `f1 <= f2` on the box around `p1`.
pub fn check_dominance(p1: &ProblemSpec, p2: &ProblemSpec, n: usize, seed: u64) -> Result<()> {
    let bx = SamplingBox::around(p1);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();
    for i in 0..n {
        let mut rng = path_rng(seed, i);
        let (t, x, y, z) = (draw(&mut rng, bx.t), draw(&mut rng, bx.x), draw(&mut rng, bx.y), draw(&mut rng, bx.z));
        let (g1, g2) = (p1.terminal_value(x)?, p2.terminal_value(x)?);
        if g1 > g2 + 1e-12 * (1.0 + g2.abs()) {
            return Err(Error::Dominance(format!("g1({x}) = {g1} > g2({x}) = {g2}")));
        }
        let (f1, f2) = (p1.generator_value(t, x, y, z), p2.generator_value(t, x, y, z));
        if !(f1 <= f2 + 1e-12 * (1.0 + f2.abs())) {
            return Err(Error::Dominance(format!(
                "f1 = {f1} > f2 = {f2} at (t,x,y,z) = ({t},{x},{y},{z})"
            )));
        }
    }
    Ok(())
}

/// Coupled Monte Carlo and PDE check of `Y1 <= Y2`.
pub fn run_comparison(p1: &ProblemSpec, p2: &ProblemSpec, plan: &ExperimentPlan) -> Result<VerificationReport> {
    if p1.forward != p2.forward {
        return Err(Error::InvalidArgument("coupled runs need one forward model".into()));
    }
    check_dominance(p1, p2, plan.dominance_samples, plan.seed ^ 0x5eed)?;
    let tol = plan.tolerance;
    let mut rep = VerificationReport::new(Claim::Comparison);
    rep.tolerances.insert("se_multiple".into(), tol.se_multiple);
    rep.tolerances.insert("grid_tol".into(), tol.grid_tol);
    for (ri, r) in plan.resolutions.iter().enumerate() {
        if r.has_mc() {
            let ens = ensemble(p1, r, plan.seed)?;
            let cfg = McConfig::new(r.bins);
            let s1 = solve_mc(p1, &ens, &cfg)?;
            let s2 = solve_mc(p2, &ens, &cfg)?;
            let (worst, violations) = mc_ordering(&s1, &s2, &ens, tol.se_multiple);
            let d0: Vec<f64> = s2.realized0.iter().zip(&s1.realized0).map(|(b, a)| b - a).collect();
            rep.stat(format!("r{ri}.mc_y0_gap"), s2.y0 - s1.y0);
            rep.stat(format!("r{ri}.mc_y0_gap_se"), std_dev(&d0) / (d0.len() as f64).sqrt());
            rep.stat(format!("r{ri}.mc_worst_slack"), worst);
            rep.stat(format!("r{ri}.mc_violations"), violations as f64);
            let mut gap = Series::new(format!("r{ri}.mc_gap_at_x0"));
            for (k, (a, b)) in s1.knots.iter().zip(&s2.knots).enumerate() {
                let m1: f64 = a.bins.iter().map(|b| b.y_hat * b.count as f64).sum::<f64>() / s1.n_paths as f64;
                let m2: f64 = b.bins.iter().map(|b| b.y_hat * b.count as f64).sum::<f64>() / s2.n_paths as f64;
                gap.push(ens.grid.t(k), m2 - m1);
            }
            rep.series.push(gap);
            rep.require(violations == 0, format!("Y1 <= Y2 + {}SE at resolution {ri}", tol.se_multiple));
        }
        if r.has_pde() {
            let cfg = pde_config(p1, plan, r)?;
            let u1 = solve_pde(p1, &cfg)?;
            let u2 = solve_pde(p2, &cfg)?;
            let interior = Interior::default();
            let mut worst = f64::INFINITY;
            for k in interior.levels(&u1) {
                for i in interior.nodes(&u1) {
                    worst = worst.min(u2.u[k][i] - u1.u[k][i]);
                }
            }
            let x0 = p1.forward.scalar_x0()?;
            rep.stat(format!("r{ri}.pde_u0_gap"), u2.u0_at(x0) - u1.u0_at(x0));
            rep.stat(format!("r{ri}.pde_worst_gap"), worst);
            rep.require(worst >= -tol.grid_tol, format!("u1 <= u2 + grid_tol at resolution {ri}"));
        }
    }
    Ok(rep)
}

/// Smallest `Y2 - Y1 + m SE` over bins and knots, and the number of bins
/// where it is negative. Both solutions must keep pathwise values.
fn mc_ordering(s1: &BackwardSolution, s2: &BackwardSolution, ens: &PathEnsemble, m: f64) -> (f64, usize) {
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for (k, (a, b)) in s1.knots.iter().zip(&s2.knots).enumerate() {
        let xs = ens.states_at(k);
        let bins = crate::numerics::QuantileBins::build(&xs, a.bins.len());
        for (j, members) in bins.iter().enumerate() {
            let d: Vec<f64> = members.iter().map(|&p| b.realized[p] - a.realized[p]).collect();
            let se = std_dev(&d) / (d.len() as f64).sqrt();
            let slack = b.bins[j].y_hat - a.bins[j].y_hat + m * se;
            // Identical inputs give exactly zero; allow rounding only.
            let slack = slack + 1e-12 * (1.0 + a.bins[j].y_hat.abs());
            worst = worst.min(slack);
            if slack < 0.0 {
                bad += 1;
            }
        }
    }
    (worst, bad)
}

/// Largest `observed / envelope` over the interior of a field and the count
/// of interior nodes where it exceeds one.
fn field_utilisation(bp: &BoundParams, field: &ValueField, interior: Interior) -> Result<(f64, usize, usize)> {
    let mut worst: f64 = 0.0;
    let (mut bad, mut total) = (0, 0);
    for k in interior.levels(field) {
        let t = field.ts[k];
        if bp.kind == BoundKind::ZTemporal && t >= bp.horizon {
            continue;
        }
        for i in interior.nodes(field) {
            let env = bp.eval(t, field.xs[i])?;
            let obs = observed(field, bp.kind, k, i)?;
            total += 1;
            if obs > env {
                bad += 1;
            }
            if env > 0.0 {
                worst = worst.max(obs / env);
            }
        }
    }
    Ok((worst, bad, total))
}

/// Bin-level Monte Carlo estimate of the audited quantity at knot `k`.
fn mc_observed(bp: &BoundParams, sol: &BackwardSolution, k: usize) -> Vec<(f64, f64)> {
    let knot = &sol.knots[k];
    match bp.kind {
        BoundKind::YGrowth => knot.bins.iter().map(|b| (b.center, b.y_hat.abs())).collect(),
        BoundKind::ZTemporal | BoundKind::ZLipschitz => knot.bins.iter().map(|b| (b.center, b.z_hat.abs())).collect(),
        // Needs pathwise Z; see `integral_by_bin`.
        BoundKind::ZIntegral => Vec::new(),
    }
}

/// Audits an envelope on PDE grids and Monte Carlo bins over the sweep.
pub fn run_envelope_audit(p: &ProblemSpec, bp: &BoundParams, plan: &ExperimentPlan) -> Result<VerificationReport> {
    if bp.calibration.is_none() {
        return Err(Error::Calibration("envelope constants carry no provenance".into()));
    }
    bp.validate()?;
    bp.check_consistent(&p.growth)?;
    let cap = 1.0 + 1.0 / p.growth.l;
    if p.growth.p_g >= cap {
        return Err(Error::Growth(format!("p_g = {} must be < 1 + 1/l = {cap}", p.growth.p_g)));
    }
    let claim = match bp.kind {
        BoundKind::YGrowth => Claim::YEnvelope,
        BoundKind::ZIntegral => Claim::ZIntegral,
        _ => Claim::ZEnvelope,
    };
    let tol = plan.tolerance;
    let mut rep = VerificationReport::new(claim);
    rep.tolerances.insert("mc_bin_fraction".into(), tol.mc_bin_fraction);
    rep.tolerances.insert("stability".into(), tol.stability);
    rep.stat("envelope_c", bp.c);
    let interior = Interior::default();
    let mut utilisation = Series::new("pde_utilisation");
    for (ri, r) in plan.resolutions.iter().enumerate() {
        if r.has_pde() {
            let mut cfg = pde_config(p, plan, r)?;
            cfg.track_energy = bp.kind == BoundKind::ZIntegral;
            let field = solve_pde(p, &cfg)?;
            let (worst, bad, total) = field_utilisation(bp, &field, interior)?;
            rep.stat(format!("r{ri}.pde_max_ratio"), worst);
            rep.stat(format!("r{ri}.pde_violations"), bad as f64);
            rep.stat(format!("r{ri}.pde_nodes"), total as f64);
            utilisation.push(field.dx, worst);
            rep.require(bad == 0, format!("zero interior violations at resolution {ri}"));
        }
        if r.has_mc() {
            let ens = ensemble(p, r, plan.seed)?;
            let mut cfg = McConfig::new(r.bins);
            cfg.keep_paths = bp.kind == BoundKind::ZIntegral;
            let sol = solve_mc(p, &ens, &cfg)?;
            let (bad, total) = mc_violations(bp, &sol, &ens, p.growth.l, interior.terminal_levels)?;
            let frac = if total == 0 { 0.0 } else { bad as f64 / total as f64 };
            rep.stat(format!("r{ri}.mc_violation_fraction"), frac);
            rep.stat(format!("r{ri}.mc_bins"), total as f64);
            rep.require(frac <= tol.mc_bin_fraction, format!("MC bin violations <= {} at resolution {ri}", tol.mc_bin_fraction));
        }
    }
    if let Some(&first) = utilisation.y.first() {
        let drift = utilisation
            .y
            .iter()
            .map(|r| if first > 0.0 { (r / first - 1.0).abs() } else { 0.0 })
            .fold(0.0, f64::max);
        rep.stat("utilisation_drift", drift);
        rep.require(drift <= tol.stability, "calibrated constant stable across the sweep");
    }
    rep.series.push(utilisation);
    Ok(rep)
}

fn mc_violations(bp: &BoundParams, sol: &BackwardSolution, ens: &PathEnsemble, l: f64, skip_last: usize) -> Result<(usize, usize)> {
    let last = sol.knots.len().saturating_sub(skip_last);
    let (mut bad, mut total) = (0, 0);
    for k in 0..last {
        let t = sol.knots[k].t;
        if bp.kind == BoundKind::ZTemporal && t >= bp.horizon {
            continue;
        }
        let obs = if bp.kind == BoundKind::ZIntegral {
            integral_by_bin(sol, ens, k, l)
        } else {
            mc_observed(bp, sol, k)
        };
        for (x, v) in obs {
            total += 1;
            if v > bp.eval(t, x)? {
                bad += 1;
            }
        }
    }
    Ok((bad, total))
}

/// Bin means of `sum_{j >= k} dt |Z_j|^{l+1}` over the bins of knot `k`.
fn integral_by_bin(sol: &BackwardSolution, ens: &PathEnsemble, k: usize, l: f64) -> Vec<(f64, f64)> {
    let n = sol.n_paths;
    let mut acc = vec![0.0; n];
    for later in &sol.knots[k..sol.knots.len() - 1] {
        for (a, z) in acc.iter_mut().zip(&later.z) {
            *a += sol.dt * z.abs().powf(l + 1.0);
        }
    }
    let xs = ens.states_at(k);
    let bins = crate::numerics::QuantileBins::build(&xs, sol.knots[k].bins.len());
    bins.iter()
        .zip(&sol.knots[k].bins)
        .map(|(m, b)| (b.center, m.iter().map(|&p| acc[p]).sum::<f64>() / m.len() as f64))
        .collect()
}

fn ladder_terminal(base: &TerminalSpec, n: f64, h: f64, p: &ProblemSpec) -> TerminalSpec {
    TerminalSpec::new(TerminalFamily::SupConvolution {
        base: Box::new(base.clone()),
        config: SupConvConfig::new(n, h, &p.growth),
    })
}

/// Solves with terminal `g_n` for each slope on one ensemble and checks that
/// `y0(n)` decreases and matches a PDE run with the same terminal data.
pub fn run_supconv_ladder(p: &ProblemSpec, n_list: &[f64], plan: &ExperimentPlan) -> Result<VerificationReport> {
    if !p.terminal.lsc {
        return Err(Error::Growth("terminal condition is not lower semi-continuous".into()));
    }
    let pl = p.growth.p_g * p.growth.l;
    if pl >= 1.0 {
        return Err(Error::Growth(format!("p_g l = {pl} must be < 1")));
    }
    if n_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("ladder slopes must increase".into()));
    }
    let n0 = admissible_n0(&p.terminal, &p.growth, AdmissibilityBox::default())?;
    if n_list[0] < n0 {
        return Err(Error::Growth(format!("first slope {} below admissible n0 = {n0}", n_list[0])));
    }
    let tol = plan.tolerance;
    let r = plan.resolutions[0];
    let mut rep = VerificationReport::new(Claim::SupconvMonotone);
    rep.tolerances.insert("se_multiple".into(), tol.se_multiple);
    rep.tolerances.insert("relative".into(), tol.relative);
    rep.stat("n0", n0);
    let x0 = p.forward.scalar_x0()?;
    let ens = if r.has_mc() { Some(ensemble(p, &r, plan.seed)?) } else { None };
    let mut mc_series = Series::new("mc_y0");
    let mut pde_series = Series::new("pde_u0");
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &n in n_list {
        let mut pn = p.clone();
        pn.terminal = ladder_terminal(&p.terminal, n, plan.ladder_grid_step, p);
        let mut mc = None;
        if let Some(ens) = &ens {
            let cfg = McConfig {
                keep_paths: false,
                ..McConfig::new(r.bins)
            };
            let s = solve_mc(&pn, ens, &cfg)?;
            rep.stat(format!("n{n}.mc_y0"), s.y0);
            rep.stat(format!("n{n}.mc_se"), s.y0_se);
            mc_series.push(n, s.y0);
            if let Some((y_prev, r_prev)) = &prev {
                let d: Vec<f64> = s.realized0.iter().zip(r_prev).map(|(a, b)| a - b).collect();
                let se = std_dev(&d) / (d.len() as f64).sqrt();
                let rise = s.y0 - y_prev;
                rep.stat(format!("n{n}.rise"), rise);
                rep.stat(format!("n{n}.rise_se"), se);
                rep.require(rise <= tol.se_multiple * se + 1e-12, format!("y0 non-increasing at n = {n}"));
            }
            if let Some(bp) = &plan.envelope {
                if bp.kind == BoundKind::YGrowth {
                    let env = bp.eval(0.0, x0)?;
                    rep.require(s.y0.abs() <= env, format!("|y0| within the Y envelope at n = {n}"));
                }
            }
            mc = Some((s.y0, s.y0_se));
            prev = Some((s.y0, s.realized0));
        }
        if r.has_pde() {
            let field = solve_pde(&pn, &pde_config(&pn, plan, &r)?)?;
            let u0 = field.u0_at(x0);
            rep.stat(format!("n{n}.pde_u0"), u0);
            pde_series.push(n, u0);
            if let Some((y0, se)) = mc {
                let allowed = (tol.relative * u0.abs()).max(tol.se_multiple * se);
                rep.stat(format!("n{n}.mc_pde_diff"), y0 - u0);
                rep.require((y0 - u0).abs() <= allowed, format!("MC matches the PDE at n = {n}"));
            }
        }
    }
    if p.terminal.is_lipschitz() == Some(true) {
        if let (Some(ens), Some((y_last, _))) = (&ens, &prev) {
            let s = solve_mc(p, ens, &McConfig { keep_paths: false, ..McConfig::new(r.bins) })?;
            rep.stat("direct_y0", s.y0);
            let allowed = (tol.relative * s.y0.abs()).max(tol.se_multiple * s.y0_se);
            rep.require((y_last - s.y0).abs() <= allowed, "last rung matches the direct solve");
        }
    }
    rep.series.push(mc_series);
    rep.series.push(pde_series);
    Ok(rep)
}

/// Fits the blow-up exponent of `max |u_x|` at every PDE resolution.
pub fn run_blowup_rate(p: &ProblemSpec, plan: &ExperimentPlan) -> Result<VerificationReport> {
    let tol = plan.tolerance;
    let l = p.growth.l;
    let floor = -1.0 / (l + 1.0) - tol.rate_slack;
    let mut rep = VerificationReport::new(Claim::BlowupRate);
    rep.tolerances.insert("exponent_floor".into(), floor);
    rep.tolerances.insert("min_r_squared".into(), tol.min_r_squared);
    if p.generator.is_zero() {
        rep.notes.push("driver vanishes: linear reference run, no superquadratic claim".into());
    }
    if p.terminal.is_lipschitz() == Some(true) {
        rep.notes.push("Lipschitz terminal: control run".into());
    }
    let mut any = false;
    for (ri, r) in plan.resolutions.iter().enumerate().filter(|(_, r)| r.has_pde()) {
        any = true;
        let field = solve_pde(p, &pde_config(p, plan, r)?)?;
        let fit = extract_rate_near_t(&field, plan.rate_window)?;
        rep.stat(format!("r{ri}.exponent"), fit.exponent);
        rep.stat(format!("r{ri}.r_squared"), fit.r_squared);
        rep.stat(format!("r{ri}.residual_rms"), fit.residual_rms);
        let mut s = Series::new(format!("r{ri}.max_abs_ux"));
        for &(t, m) in &field.max_abs_ux {
            if t < field.horizon {
                s.push(field.horizon - t, m);
            }
        }
        rep.series.push(s);
        rep.require(fit.exponent >= floor, format!("exponent >= {floor} at resolution {ri}"));
        // A flat profile has no variance to explain; its residual is what matters.
        let flat = fit.residual_rms <= 0.01;
        rep.require(fit.r_squared >= tol.min_r_squared || flat, format!("R^2 >= {} at resolution {ri}", tol.min_r_squared));
    }
    if !any {
        return Err(Error::config("plan.resolutions", "rate fits need a PDE resolution"));
    }
    Ok(rep)
}

/// Mean `|Y_t - g(X_T)|` must shrink over the last probe knots.
pub fn run_terminal_continuity(p: &ProblemSpec, plan: &ExperimentPlan) -> Result<VerificationReport> {
    let r = plan.resolutions.iter().find(|r| r.has_mc()).copied();
    let r = r.ok_or_else(|| Error::config("plan.resolutions", "terminal continuity needs an MC resolution"))?;
    let ens = ensemble(p, &r, plan.seed)?;
    let sol = solve_mc(p, &ens, &McConfig::new(r.bins))?;
    let probes: Vec<usize> = (r.steps.saturating_sub(8)..r.steps).collect();
    let c = terminal_continuity_probe(p, &ens, &sol, &probes)?;
    let mut rep = VerificationReport::new(Claim::TerminalContinuity);
    if let Some(e) = c.fitted_exponent {
        rep.stat("fitted_exponent", e);
    }
    if let Some(e) = &c.fit_error {
        rep.notes.push(e.clone());
    }
    let mut s = Series::new("gap");
    for (t, g) in c.taus.iter().zip(&c.gaps) {
        s.push(*t, *g);
    }
    rep.series.push(s);
    rep.require(c.passed, "gap decreases over the last four probes");
    Ok(rep)
}

const MAX_CLIP_FRACTION: f64 = 1e-3;

/// With an envelope that holds, clipping `Z` must not move the solution.
pub fn run_truncation_inertness(p: &ProblemSpec, bp: &BoundParams, plan: &ExperimentPlan) -> Result<VerificationReport> {
    let tol = plan.tolerance;
    let mut rep = VerificationReport::new(Claim::TruncationInertness);
    let x0 = p.forward.scalar_x0()?;
    for (ri, r) in plan.resolutions.iter().enumerate() {
        if r.has_mc() {
            let ens = ensemble(p, r, plan.seed)?;
            let plain = solve_mc(p, &ens, &McConfig { keep_paths: false, ..McConfig::new(r.bins) })?;
            let cut = solve_mc(
                p,
                &ens,
                &McConfig {
                    keep_paths: false,
                    truncation: Some(bp.clone()),
                    ..McConfig::new(r.bins)
                },
            )?;
            rep.stat(format!("r{ri}.mc_shift"), cut.y0 - plain.y0);
            rep.stat(format!("r{ri}.mc_se"), plain.y0_se);
            rep.stat(format!("r{ri}.max_clip_fraction"), cut.max_clip_fraction());
            rep.require(
                (cut.y0 - plain.y0).abs() < plain.y0_se,
                format!("truncation moves y0 by less than one SE at resolution {ri}"),
            );
            rep.require(
                cut.max_clip_fraction() < MAX_CLIP_FRACTION,
                format!("clip fraction below {MAX_CLIP_FRACTION} at resolution {ri}"),
            );
        }
        if r.has_pde() {
            let cfg = pde_config(p, plan, r)?;
            let plain = solve_pde(p, &cfg)?;
            let mut clipped_cfg = cfg.clone();
            clipped_cfg.gradient_clip = Some(bp.clone());
            let cut = solve_pde(p, &clipped_cfg)?;
            let shift = cut.u0_at(x0) - plain.u0_at(x0);
            rep.stat(format!("r{ri}.pde_shift"), shift);
            rep.stat(format!("r{ri}.pde_clip_events"), cut.clip_events as f64);
            rep.require(shift.abs() <= tol.grid_tol.max(1e-9), format!("truncated PDE agrees at resolution {ri}"));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{Calibration, CalibrationMethod};
    use crate::problem::{DriftSpec, ForwardModel, GeneratorFamily, GeneratorSpec, GrowthParams};

    fn problem(generator: GeneratorSpec, terminal: TerminalSpec) -> ProblemSpec {
        ProblemSpec::new(
            "v",
            ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
            generator,
            terminal,
            GrowthParams::with_l(2.0),
        )
    }

    fn cubic_plus(c0: f64) -> GeneratorSpec {
        GeneratorSpec::new(GeneratorFamily::Power {
            c0,
            c_x: 0.0,
            c_y: 0.0,
            c_z: 1.0,
            q: 3.0,
            source: None,
        })
    }

    fn comparison_plan(p1: ProblemSpec, p2: ProblemSpec) -> ExperimentPlan {
        let r = Resolution::mc(4000, 10, 10).with_pde(100, 500);
        ExperimentPlan::new(Claim::Comparison, vec![p1, p2], vec![r], 7)
    }

    #[test]
    fn identical_pair_has_zero_gap() {
        let p = problem(cubic_plus(0.0), TerminalSpec::linear(2.0, 0.0));
        let rep = run_plan(&comparison_plan(p.clone(), p)).unwrap();
        assert!(rep.passed, "{:?}", rep.notes);
        assert_eq!(rep.statistics["r0.mc_y0_gap"], 0.0);
        assert_eq!(rep.statistics["r0.pde_worst_gap"], 0.0);
    }

    #[test]
    fn additive_driver_shift_gives_gap_t() {
        let p1 = problem(cubic_plus(0.0), TerminalSpec::linear(2.0, 0.0));
        let p2 = problem(cubic_plus(1.0), TerminalSpec::linear(2.0, 0.0));
        let rep = run_plan(&comparison_plan(p1, p2)).unwrap();
        assert!(rep.passed, "{:?}", rep.notes);
        assert!((rep.statistics["r0.mc_y0_gap"] - 1.0).abs() < 1e-6);
        assert!((rep.statistics["r0.pde_u0_gap"] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn violated_dominance_fails_the_precondition() {
        let p1 = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 1.0));
        let p2 = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0));
        let err = run_plan(&comparison_plan(p1, p2)).unwrap_err();
        assert!(matches!(err, Error::Dominance(_)), "{err}");
    }

    #[test]
    fn arity_and_envelope_are_checked() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0));
        let plan = ExperimentPlan::new(Claim::Comparison, vec![p.clone()], vec![Resolution::mc(100, 2, 2)], 0);
        assert!(matches!(plan.validate(), Err(Error::Config { .. })));
        let plan = ExperimentPlan::new(Claim::YEnvelope, vec![p], vec![Resolution::mc(100, 2, 2)], 0);
        assert!(matches!(plan.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn uncalibrated_envelope_is_refused() {
        let p = problem(GeneratorSpec::zero(), TerminalSpec::linear(1.0, 0.0));
        let bp = BoundParams::new(BoundKind::YGrowth, &p.growth, 1.0).with_c(10.0);
        let plan = ExperimentPlan::new(Claim::YEnvelope, vec![p.clone()], vec![Resolution::pde(50, 100)], 0);
        assert!(matches!(run_envelope_audit(&p, &bp, &plan), Err(Error::Calibration(_))));
    }

    #[test]
    fn truncation_is_inert_for_bounded_z() {
        let p = problem(cubic_plus(0.0), TerminalSpec::linear(2.0, 0.0));
        let bp = BoundParams::new(BoundKind::ZTemporal, &p.growth, 1.0)
            .with_c(3.0)
            .calibrated(Calibration::now(CalibrationMethod::Analytic, "Z = 2 exactly"));
        let mut plan = ExperimentPlan::new(Claim::TruncationInertness, vec![p], vec![Resolution::mc(4000, 10, 10)], 3);
        plan.envelope = Some(bp);
        let rep = run_plan(&plan).unwrap();
        assert!(rep.passed, "{:?} {:?}", rep.notes, rep.statistics);
    }

    #[test]
    fn reports_are_reproducible() {
        let p1 = problem(cubic_plus(0.0), TerminalSpec::linear(2.0, 0.0));
        let p2 = problem(cubic_plus(0.5), TerminalSpec::linear(2.0, 1.0));
        let plan = comparison_plan(p1, p2);
        assert_eq!(run_plan(&plan).unwrap(), run_plan(&plan).unwrap());
    }
}
