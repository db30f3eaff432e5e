//! One function per subcommand. Each reads its table from the document,
//! writes its artifacts into the run directory and returns an [`Outcome`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use superbsde_core::bounds::assumptions::{check_assumption, SamplingBox};
use superbsde_core::bounds::calibrate::{calibrate_from_field, Interior};
use superbsde_core::bounds::recursion::{recursion_fixed_point, RecursionState};
use superbsde_core::bounds::{BoundKind, BoundParams};
use superbsde_core::forward::{simulate, write_cache, TimeGrid};
use superbsde_core::mcsolver::{solve_mc, McConfig, RegressionBasis};
use superbsde_core::numerics::{mean, std_dev};
use superbsde_core::pde::{extract_rate_near_t, solve_pde, PdeConfig};
use superbsde_core::supconv::{admissible_n0, sup_convolve, AdmissibilityBox, SupConvConfig};
use superbsde_core::verify::{run_plan, ExperimentPlan, Series, VerificationReport};
use superbsde_core::{Assumption, Error as CoreError, ProblemSpec};

use crate::document::{Document, RunDir};
use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Outcome {
    pub statistics: BTreeMap<String, f64>,
    pub series: Vec<Series>,
    pub passed: Option<bool>,
    pub resolutions: serde_json::Value,
    pub calibrated: Vec<BoundParams>,
    /// Printed after the run summary.
    pub stdout: String,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Shortest round-trip representation, with an exponent for very small or large values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_paths: usize,
    pub steps: usize,
    pub write_paths: bool,
    /// Also write the binary ensemble cache.
    pub cache: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n_paths: 1000,
            steps: 50,
            write_paths: true,
            cache: false,
        }
    }
}

pub fn simulate_cmd(doc: &Document, seed: u64, run: &mut RunDir) -> CliResult<Outcome> {
    let p = doc.problem()?;
    let s: SimulateSection = doc.section("simulate")?;
    let ens = simulate(&p.forward, TimeGrid::new(p.horizon(), s.steps)?, s.n_paths, seed)?;
    if s.write_paths {
        let rows = (0..ens.n_paths).flat_map(|path| {
            let ens = &ens;
            (0..=ens.grid.steps).map(move |k| {
                vec![path.to_string(), k.to_string(), num(ens.grid.t(k)), num(ens.state(path, k))]
            })
        });
        run.csv("paths.csv", &["path", "knot", "t", "x"], rows)?;
    }
    if s.cache {
        run.file("ensemble.bin")?;
        write_cache(&ens, &run.path.join("ensemble.bin"))?;
    }
    let xt = ens.terminal_states();
    let mut out = Outcome {
        resolutions: json(&s),
        ..Outcome::default()
    };
    out.statistics.insert("terminal_mean".into(), mean(&xt));
    out.statistics.insert("terminal_std".into(), std_dev(&xt));
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub n_x: usize,
    pub n_t: usize,
    /// Half-width of the domain in units of `sigma sqrt(T)`, unless
    /// `x_min` and `x_max` are both given.
    pub domain_k: f64,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub store_stride: Option<usize>,
    pub track_energy: bool,
    pub gradient_clip: Option<BoundParams>,
    pub blowup_guard: Option<BoundParams>,
    /// `T - t` window for a blow-up rate fit.
    pub rate_window: Option<(f64, f64)>,
    pub write_field: bool,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            n_x: 400,
            n_t: 2000,
            domain_k: 6.0,
            x_min: None,
            x_max: None,
            store_stride: None,
            track_energy: false,
            gradient_clip: None,
            blowup_guard: None,
            rate_window: None,
            write_field: true,
        }
    }
}

impl PdeSection {
    fn config(&self, p: &ProblemSpec) -> CliResult<PdeConfig> {
        let mut cfg = match (self.x_min, self.x_max) {
            (Some(lo), Some(hi)) => PdeConfig::new(lo, hi, self.n_x, self.n_t),
            (None, None) => PdeConfig::auto_domain(p, self.domain_k, self.n_x, self.n_t)?,
            _ => {
                return Err(CoreError::Config {
                    path: "pde.x_min".into(),
                    message: "give both x_min and x_max or neither".into(),
                }
                .into())
            }
        };
        cfg.store_stride = self.store_stride.unwrap_or((self.n_t / 200).max(1));
        cfg.track_energy = self.track_energy;
        cfg.gradient_clip = self.gradient_clip.clone();
        cfg.blowup_guard = self.blowup_guard.clone();
        Ok(cfg)
    }
}

pub fn solve_pde_cmd(doc: &Document, run: &mut RunDir) -> CliResult<Outcome> {
    let p = doc.problem()?;
    let s: PdeSection = doc.section("pde")?;
    let field = solve_pde(&p, &s.config(&p)?)?;
    if s.write_field {
        field.write_csv(run.file("field.csv")?)?;
    }
    let x0 = p.forward.scalar_x0()?;
    let u0 = field.u0_at(x0);
    let z0 = field.z_at(0.0, x0);
    run.csv("u0.csv", &["x0", "u0", "z0"], [vec![num(x0), num(u0), num(z0)]])?;
    let mut out = Outcome {
        resolutions: json(&s),
        ..Outcome::default()
    };
    out.statistics.insert("u0".into(), u0);
    out.statistics.insert("z0".into(), z0);
    out.statistics.insert("dx".into(), field.dx);
    out.statistics.insert("dt".into(), field.dt);
    out.statistics.insert("clip_events".into(), field.clip_events as f64);
    if let Some(window) = s.rate_window {
        let fit = extract_rate_near_t(&field, window)?;
        out.statistics.insert("exponent".into(), fit.exponent);
        out.statistics.insert("r_squared".into(), fit.r_squared);
        let mut series = Series {
            name: "max_abs_ux".into(),
            x: Vec::new(),
            y: Vec::new(),
        };
        for &(t, m) in field.max_abs_ux.iter().filter(|(t, _)| *t < field.horizon) {
            series.x.push(field.horizon - t);
            series.y.push(m);
        }
        out.series.push(series);
    }
    Ok(out)
}

/// Pilot PDE calibration of an envelope constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub kind: BoundKind,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_pilot_nx")]
    pub n_x: usize,
    #[serde(default = "default_pilot_nt")]
    pub n_t: usize,
    #[serde(default = "default_domain")]
    pub domain_k: f64,
}

fn default_safety() -> f64 {
    1.5
}
fn default_pilot_nx() -> usize {
    400
}
fn default_pilot_nt() -> usize {
    4000
}
fn default_domain() -> f64 {
    6.0
}

impl CalibrateSection {
    pub fn run(&self, p: &ProblemSpec) -> CliResult<BoundParams> {
        let mut cfg = PdeConfig::auto_domain(p, self.domain_k, self.n_x, self.n_t)?;
        cfg.store_stride = (self.n_t / 400).max(1);
        cfg.track_energy = self.kind == BoundKind::ZIntegral;
        let field = solve_pde(p, &cfg)?;
        let template = BoundParams::new(self.kind, &p.growth, p.horizon());
        Ok(calibrate_from_field(&template, &field, Interior::default(), self.safety)?.params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub steps: usize,
    pub bins: usize,
    pub min_paths_per_bin: usize,
    pub drift_shift: bool,
    pub truncation: Option<BoundParams>,
    /// Calibrates the truncation envelope by a pilot PDE run instead.
    pub calibrate_truncation: Option<CalibrateSection>,
    pub divergence_guard: Option<BoundParams>,
    /// Reports `E[exp(kappa int |Z|^{2l})]` when set.
    pub exp_moment_kappa: Option<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            n_paths: 10_000,
            steps: 50,
            bins: 40,
            min_paths_per_bin: 50,
            drift_shift: true,
            truncation: None,
            calibrate_truncation: None,
            divergence_guard: None,
            exp_moment_kappa: None,
        }
    }
}

pub fn solve_mc_cmd(doc: &Document, seed: u64, run: &mut RunDir) -> CliResult<Outcome> {
    let p = doc.problem()?;
    let s: McSection = doc.section("mc")?;
    let mut out = Outcome {
        resolutions: json(&s),
        ..Outcome::default()
    };
    let truncation = match (&s.truncation, &s.calibrate_truncation) {
        (Some(_), Some(_)) => {
            return Err(CoreError::Config {
                path: "mc.truncation".into(),
                message: "give either truncation or calibrate_truncation".into(),
            }
            .into())
        }
        (Some(bp), None) => Some(bp.clone()),
        (None, Some(c)) => {
            let bp = c.run(&p)?;
            out.calibrated.push(bp.clone());
            Some(bp)
        }
        (None, None) => None,
    };
    let cfg = McConfig {
        basis: RegressionBasis {
            bins: s.bins,
            min_paths_per_bin: s.min_paths_per_bin,
        },
        truncation,
        divergence_guard: s.divergence_guard.clone(),
        keep_paths: s.exp_moment_kappa.is_some(),
        drift_shift: s.drift_shift,
    };
    let ens = simulate(&p.forward, TimeGrid::new(p.horizon(), s.steps)?, s.n_paths, seed)?;
    let sol = solve_mc(&p, &ens, &cfg)?;
    sol.write_csv(run.file("knots.csv")?)?;
    run.csv("y0.csv", &["y0", "y0_se"], [vec![num(sol.y0), num(sol.y0_se)]])?;
    out.statistics.insert("y0".into(), sol.y0);
    out.statistics.insert("y0_se".into(), sol.y0_se);
    out.statistics.insert("max_clip_fraction".into(), sol.max_clip_fraction());
    if let Some(kappa) = s.exp_moment_kappa {
        if let Some(m) = sol.exponential_moment(kappa, p.growth.l) {
            out.statistics.insert("exponential_moment".into(), m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupconvSection {
    pub n: Option<f64>,
    pub grid_step: f64,
    pub search_radius_factor: f64,
    pub refine: bool,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for SupconvSection {
    fn default() -> Self {
        SupconvSection {
            n: None,
            grid_step: 1e-3,
            search_radius_factor: 1.0,
            refine: false,
            x_min: -2.0,
            x_max: 2.0,
            points: 81,
        }
    }
}

pub fn supconv_cmd(doc: &Document, run: &mut RunDir) -> CliResult<Outcome> {
    let p = doc.problem()?;
    let s: SupconvSection = doc.section("supconv")?;
    let n = s.n.ok_or_else(|| {
        CliError::from(CoreError::Config {
            path: "supconv.n".into(),
            message: "penalty slope is required".into(),
        })
    })?;
    if s.points < 2 || s.x_max.partial_cmp(&s.x_min) != Some(std::cmp::Ordering::Greater) {
        return Err(CoreError::Config {
            path: "supconv.points".into(),
            message: "need at least two points on a non-empty interval".into(),
        }
        .into());
    }
    let mut cfg = SupConvConfig::new(n, s.grid_step, &p.growth);
    cfg.search_radius_factor = s.search_radius_factor;
    cfg.refine = s.refine;
    let mut rows = Vec::with_capacity(s.points);
    let mut max_gap: f64 = 0.0;
    for i in 0..s.points {
        let x = s.x_min + (s.x_max - s.x_min) * i as f64 / (s.points - 1) as f64;
        let v = sup_convolve(&p.terminal, &cfg, x)?;
        max_gap = max_gap.max(v.certified_gap);
        rows.push(vec![
            num(x),
            num(p.terminal_value(x)?),
            num(v.value),
            num(v.certified_gap),
            num(v.argmax),
            num(v.radius),
        ]);
    }
    run.csv("supconv.csv", &["x", "g", "g_n", "certified_gap", "argmax", "radius"], rows)?;
    let mut out = Outcome {
        resolutions: json(&s),
        ..Outcome::default()
    };
    out.statistics.insert("n".into(), n);
    out.statistics.insert("max_certified_gap".into(), max_gap);
    if let Ok(n0) = admissible_n0(&p.terminal, &p.growth, AdmissibilityBox::default()) {
        out.statistics.insert("admissible_n0".into(), n0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionsSection {
    pub samples: usize,
    pub which: Vec<Assumption>,
    pub sampling_box: Option<SamplingBox>,
}

impl Default for AssumptionsSection {
    fn default() -> Self {
        AssumptionsSection {
            samples: 4000,
            which: Assumption::ALL.to_vec(),
            sampling_box: None,
        }
    }
}

pub fn check_assumptions_cmd(doc: &Document, seed: u64, run: &mut RunDir) -> CliResult<Outcome> {
    let p = doc.problem()?;
    let s: AssumptionsSection = doc.section("assumptions")?;
    let bx = s.sampling_box.unwrap_or_else(|| SamplingBox::around(&p));
    let mut out = Outcome {
        resolutions: json(&s),
        passed: Some(true),
        ..Outcome::default()
    };
    let mut rows = Vec::new();
    let _ = writeln!(out.stdout, "{:<6} {:<6} {:>14}", "check", "status", "worst_margin");
    for which in &s.which {
        let r = check_assumption(&p, *which, &bx, s.samples, seed)?;
        let status = if r.passed { "pass" } else { "FAIL" };
        let _ = writeln!(out.stdout, "{:<6} {:<6} {:>14.6e}", which.name(), status, r.worst_margin);
        if let (false, Some(w)) = (r.passed, r.witness) {
            let q = w.point;
            let _ = writeln!(
                out.stdout,
                "       witness t={} x={} x'={} y={} y'={} z={} z'={}: lhs={} rhs={}",
                q.t, q.x, q.x2, q.y, q.y2, q.z, q.z2, w.lhs, w.rhs
            );
        }
        out.passed = Some(out.passed == Some(true) && r.passed);
        out.statistics.insert(format!("{}.worst_margin", which.name()), r.worst_margin);
        out.statistics.insert(format!("{}.passed", which.name()), f64::from(u8::from(r.passed)));
        let mut row = vec![
            which.name().to_string(),
            status.to_string(),
            num(r.worst_margin),
            r.n_checked.to_string(),
            r.n_excluded.to_string(),
        ];
        match r.witness {
            Some(w) => {
                let q = w.point;
                row.extend([q.t, q.x, q.x2, q.y, q.y2, q.z, q.z2, w.lhs, w.rhs].map(num));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 9)),
        }
        rows.push(row);
    }
    run.csv(
        "assumptions.csv",
        &[
            "assumption", "status", "worst_margin", "n_checked", "n_excluded", "t", "x", "x2", "y", "y2", "z", "z2",
            "lhs", "rhs",
        ],
        rows,
    )?;
    Ok(out)
}

/// Arguments of `fixed-point`; a `fixed_point` table in the config may
/// replace `--al` by the seeded form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointSection {
    pub c: f64,
    pub a: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPointArgs {
    pub c: f64,
    pub al: Option<f64>,
    pub p: f64,
    pub pbar: f64,
    pub tol: f64,
    pub max_iter: usize,
}

pub fn fixed_point_cmd(doc: &Document, args: FixedPointArgs, run: &mut RunDir) -> CliResult<Outcome> {
    let init = match (args.al, doc.value.get("fixed_point")) {
        (Some(al), None) => RecursionState::with_al(args.c, al, args.p, args.pbar),
        (None, Some(_)) => {
            let s: FixedPointSection = doc.required("fixed_point")?;
            let p = doc.problem()?;
            RecursionState::seeded(s.c, s.a, &p.growth, s.c0, p.horizon())
        }
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --al or a fixed_point table, not both".into())),
        (None, None) => return Err(CliError::Usage("fixed-point needs --al or a config with a fixed_point table".into())),
    };
    let res = recursion_fixed_point(init, args.tol, args.max_iter)?;
    let rows: Vec<Vec<String>> = res
        .trace
        .iter()
        .map(|s| vec![s.n.to_string(), num(s.a_n), num(s.b_n), num(s.d_n)])
        .collect();
    let mut out = Outcome {
        resolutions: json(&args),
        ..Outcome::default()
    };
    out.stdout.push_str("n,a_n,b_n,d_n\n");
    for r in &rows {
        let _ = writeln!(out.stdout, "{}", r.join(","));
    }
    run.csv("trace.csv", &["n", "a_n", "b_n", "d_n"], rows)?;
    out.statistics.insert("a_inf".into(), res.a_inf);
    out.statistics.insert("iterations".into(), res.iterations as f64);
    out.statistics.insert("residual".into(), res.residual);
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyDocument {
    plan: ExperimentPlan,
    #[serde(default)]
    calibrate: Option<CalibrateSection>,
    #[serde(default)]
    #[allow(dead_code)]
    seed: Option<u64>,
}

pub fn verify_cmd(doc: &Document, seed_flag: Option<u64>, run: &mut RunDir) -> CliResult<Outcome> {
    let vd: VerifyDocument = superbsde_core::problem::config::from_value(doc.value.clone())?;
    let mut plan = vd.plan;
    plan.seed = seed_flag
        .or(doc.replayed_seed)
        .or(vd.seed)
        .unwrap_or(plan.seed);
    let mut out = Outcome::default();
    if let Some(c) = &vd.calibrate {
        let p = plan
            .problems
            .first()
            .ok_or_else(|| CliError::Usage("plan has no problems".into()))?;
        let bp = c.run(p)?;
        out.calibrated.push(bp.clone());
        plan.envelope = Some(bp);
    }
    out.resolutions = json(&plan.resolutions);
    let rep = run_plan(&plan)?;
    write_report(&rep, plan.seed, run)?;
    out.passed = Some(rep.passed);
    out.statistics = rep.statistics.clone();
    out.series = rep.series.clone();
    out.stdout = report_text(&rep, plan.seed);
    Ok(out)
}

fn report_text(rep: &VerificationReport, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "claim: {}", rep.claim.name());
    let _ = writeln!(s, "status: {}", if rep.passed { "PASS" } else { "FAIL" });
    let _ = writeln!(s, "seed: {seed}");
    let _ = writeln!(s, "[statistics]");
    for (k, v) in &rep.statistics {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "[tolerances]");
    for (k, v) in &rep.tolerances {
        let _ = writeln!(s, "{k} = {v}");
    }
    if !rep.notes.is_empty() {
        let _ = writeln!(s, "[notes]");
        for n in &rep.notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn write_report(rep: &VerificationReport, seed: u64, run: &mut RunDir) -> CliResult<()> {
    run.text("report.txt", &report_text(rep, seed))?;
    let mut full = rep.clone();
    full.artifacts = vec!["report.txt".into(), "statistics.csv".into(), "series.csv".into()];
    run.text("report.json", &(serde_json::to_string_pretty(&full)? + "\n"))?;
    Ok(())
}
