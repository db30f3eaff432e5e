//! Command-line driver: config ingestion, subcommand dispatch, CSV output
//! and run manifests.
//!
//! Exit codes: 0 on success, 1 when a claim fails or a solver gives up,
//! 2 on configuration and usage errors.

pub mod commands;
pub mod document;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::{FixedPointArgs, Outcome};
use crate::document::{Document, RunDir};
use crate::error::{CliError, CliResult};
use crate::manifest::{digest, module_versions, RunManifest, MANIFEST_VERSION};

#[derive(Debug, Parser)]
#[command(name = "superbsde", version, about = "Solvers and verification harness for superquadratic BSDEs")]
pub struct Cli {
    /// Master seed; overrides the config and any replayed manifest.
    #[arg(long, global = true, env = "SUPERBSDE_SEED")]
    pub seed: Option<u64>,
    /// Output directory (default `superbsde-out/<subcommand>`).
    #[arg(long, global = true, env = "SUPERBSDE_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, env = "SUPERBSDE_THREADS")]
    pub threads: Option<usize>,
    /// Config document (TOML or JSON) or a run manifest to replay.
    #[arg(long, global = true, env = "SUPERBSDE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Config document; same as `--config`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixedPointCli {
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long)]
    pub al: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub pbar: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Config with `problem` and `fixed_point` tables for the seeded form.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportCli {
    /// Run directories holding manifests.
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the forward diffusion and write the paths.
    Simulate(ConfigArg),
    /// Solve the associated PDE by finite differences.
    SolvePde(ConfigArg),
    /// Least-squares Monte Carlo backward solve.
    SolveMc(ConfigArg),
    /// Evaluate the sup-convolution of the terminal condition on a grid.
    Supconv(ConfigArg),
    /// Sampled checks of the structural assumptions.
    CheckAssumptions(ConfigArg),
    /// Iterate the recursion for the temporal Z constant.
    FixedPoint(FixedPointCli),
    /// Run an experiment plan.
    Verify(ConfigArg),
    /// Aggregate finished runs into a summary table.
    Report(ReportCli),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::SolvePde(_) => "solve-pde",
            Command::SolveMc(_) => "solve-mc",
            Command::Supconv(_) => "supconv",
            Command::CheckAssumptions(_) => "check-assumptions",
            Command::FixedPoint(_) => "fixed-point",
            Command::Verify(_) => "verify",
            Command::Report(_) => "report",
        }
    }

    fn positional(&self) -> Option<&PathBuf> {
        match self {
            Command::Simulate(a)
            | Command::SolvePde(a)
            | Command::SolveMc(a)
            | Command::Supconv(a)
            | Command::CheckAssumptions(a)
            | Command::Verify(a) => a.path.as_ref(),
            Command::FixedPoint(a) => a.path.as_ref(),
            Command::Report(_) => None,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<i32> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| execute(cli)),
        None => execute(cli),
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    let name = cli.command.name();
    let started = Instant::now();
    let config_path = match (cli.command.positional(), cli.config.as_ref()) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Usage("config given both positionally and by --config".into()))
        }
        (Some(p), _) | (None, Some(p)) => Some(p.clone()),
        (None, None) => None,
    };
    let doc = match &config_path {
        Some(p) => Document::load(p, name)?,
        None => Document::empty(),
    };
    let needs_config = !matches!(cli.command, Command::FixedPoint(_) | Command::Report(_));
    if needs_config && config_path.is_none() {
        return Err(CliError::Usage(format!("`{name}` needs a config document")));
    }
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("superbsde-out").join(name));
    let mut dir = RunDir::create(out_dir)?;
    let seed = doc.seed(cli.seed);

    let outcome = match &cli.command {
        Command::Simulate(_) => commands::simulate_cmd(&doc, seed, &mut dir)?,
        Command::SolvePde(_) => commands::solve_pde_cmd(&doc, &mut dir)?,
        Command::SolveMc(_) => commands::solve_mc_cmd(&doc, seed, &mut dir)?,
        Command::Supconv(_) => commands::supconv_cmd(&doc, &mut dir)?,
        Command::CheckAssumptions(_) => commands::check_assumptions_cmd(&doc, seed, &mut dir)?,
        Command::FixedPoint(a) => {
            let args = FixedPointArgs {
                c: a.c,
                al: a.al,
                p: a.p,
                pbar: a.pbar,
                tol: a.tol,
                max_iter: a.max_iter,
            };
            commands::fixed_point_cmd(&doc, args, &mut dir)?
        }
        Command::Verify(_) => commands::verify_cmd(&doc, cli.seed, &mut dir)?,
        Command::Report(r) => {
            let (all_pass, text) = report::write_report(&r.runs, &mut dir)?;
            Outcome {
                passed: Some(all_pass),
                resolutions: serde_json::Value::Null,
                stdout: text,
                ..Outcome::default()
            }
        }
    };

    // The report subcommand records its inputs instead of a config document.
    let config = match &cli.command {
        Command::Report(r) => serde_json::json!({ "runs": r.runs }),
        _ => doc.value.clone(),
    };
    finish(name, config, seed, cli.threads, started, outcome, &mut dir)
}

fn finish(
    name: &str,
    config: serde_json::Value,
    seed: u64,
    threads: Option<usize>,
    started: Instant,
    outcome: Outcome,
    dir: &mut RunDir,
) -> CliResult<i32> {
    if name != "report" {
        let rows = outcome.statistics.iter().map(|(k, v)| vec![k.clone(), commands::num(*v)]);
        dir.csv("statistics.csv", &["key", "value"], rows)?;
    }
    if !outcome.series.is_empty() {
        let rows = outcome.series.iter().flat_map(|s| {
            s.x.iter()
                .zip(&s.y)
                .map(|(x, y)| vec![s.name.clone(), commands::num(*x), commands::num(*y)])
        });
        dir.csv("series.csv", &["series", "x", "y"], rows)?;
    }
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        subcommand: name.to_string(),
        config_digest: digest(&config),
        config,
        master_seed: seed,
        module_versions: module_versions(),
        resolutions: outcome.resolutions,
        calibrated_constants: outcome.calibrated,
        outputs: dir.outputs.clone(),
        passed: outcome.passed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        threads,
    };
    manifest.write(&dir.path)?;

    if !outcome.stdout.is_empty() {
        print!("{}", outcome.stdout);
    }
    if name != "verify" {
        for (k, v) in &outcome.statistics {
            println!("{k} = {}", commands::num(*v));
        }
    }
    println!("outputs: {}", dir.path.display());
    Ok(match outcome.passed {
        Some(false) => 1,
        _ => 0,
    })
}
