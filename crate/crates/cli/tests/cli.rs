use std::fs;
use std::path::Path;
use std::process::Command;

use superbsde_cli::dispatch;
use superbsde_cli::manifest::RunManifest;

fn cli(args: &[&str]) -> i32 {
    dispatch(std::iter::once("superbsde").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seed = 4
[problem]
[problem.forward]
x0 = [0.0]
horizon = 1.0
sigma = { kind = "constant", value = 1.0 }
[problem.generator]
family = "power"
c_z = 1.0
q = 3.0
[problem.terminal]
family = "linear"
slope = 2.0
[problem.growth]
l = 2.0
[mc]
n_paths = 2000
steps = 10
bins = 10
[pde]
n_x = 100
n_t = 400
[simulate]
n_paths = 50
steps = 4
"#;

fn small(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn unknown_subcommand_and_missing_config_are_usage_errors() {
    assert_eq!(cli(&["frobnicate"]), 2);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["solve-pde", "--out-dir", s(tmp.path())]), 2);
    assert_eq!(cli(&["solve-pde", "/nonexistent/config.toml"]), 2);
}

#[test]
fn schema_violations_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("bins = 10", "bins = 10\nbogus = 1")).unwrap();
    assert_eq!(cli(&["solve-mc", s(&bad), "--out-dir", s(&tmp.path().join("o"))]), 2);
}

#[test]
fn manifest_lists_every_output_and_digest_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("mc");
    assert_eq!(cli(&["solve-mc", s(&cfg), "--out-dir", s(&out)]), 0);
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.subcommand, "solve-mc");
    assert_eq!(m.master_seed, 4);
    assert!(m.outputs.contains(&"knots.csv".to_string()));
    assert!(m.outputs.contains(&"statistics.csv".to_string()));
    assert!(m.module_versions.contains_key("superbsde-core"));
}

#[test]
fn tampered_manifest_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("pde");
    assert_eq!(cli(&["solve-pde", s(&cfg), "--out-dir", s(&out)]), 0);
    let path = out.join("manifest.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"n_t\": 400", "\"n_t\": 401");
    fs::write(&path, text).unwrap();
    assert!(RunManifest::load(&out).is_err());
    assert_eq!(cli(&["report", s(&out), "--out-dir", s(&tmp.path().join("r"))]), 2);
}

#[test]
fn empty_report_is_empty_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert_eq!(cli(&["report", "--out-dir", s(&out)]), 0);
    let text = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn report_marks_passing_and_failing_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("good.toml");
    fs::write(&cfg, SMALL.to_string() + "[assumptions]\nsamples = 1000\nwhich = [\"B3\"]\n").unwrap();
    let good = tmp.path().join("good");
    assert_eq!(cli(&["check-assumptions", s(&cfg), "--out-dir", s(&good)]), 0);
    let failing = SMALL
        .replace("family = \"linear\"\nslope = 2.0", "family = \"power\"\nexponent = 2.0")
        .replace("l = 2.0", "l = 2.0\np_g = 0.5\nalpha_bar = 1.0\nc_growth = 1.0")
        + "[assumptions]\nsamples = 1000\nwhich = [\"TC2\"]\n";
    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, failing).unwrap();
    let bad = tmp.path().join("bad");
    assert_eq!(cli(&["check-assumptions", s(&bad_cfg), "--out-dir", s(&bad)]), 1);

    let rep = tmp.path().join("rep");
    assert_eq!(cli(&["report", s(&good), s(&bad), "--out-dir", s(&rep)]), 1);
    let summary = fs::read_to_string(rep.join("summary.csv")).unwrap();
    let status = |run: &Path| {
        let name = run.display().to_string();
        summary
            .lines()
            .find(|l| l.starts_with(&name))
            .and_then(|l| l.split(',').nth(2))
            .unwrap()
            .to_string()
    };
    assert_eq!(status(&good), "pass");
    assert_eq!(status(&bad), "fail");
}

#[test]
fn rate_runs_land_in_the_long_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("rate.toml");
    let doc = SMALL
        .replace("family = \"linear\"\nslope = 2.0", "family = \"power\"\nexponent = 0.5")
        .replace("q = 3.0", "q = 2.5")
        .replace("l = 2.0", "l = 1.5\np_g = 0.5\nalpha_bar = 1.0")
        .replace("n_x = 100\nn_t = 400", "n_x = 600\nn_t = 5000\nrate_window = [0.01, 0.3]\nwrite_field = false");
    fs::write(&cfg, doc).unwrap();
    let mut dirs = Vec::new();
    for n_x in ["600", "1200"] {
        let text = fs::read_to_string(&cfg).unwrap();
        let c = tmp.path().join(format!("rate{n_x}.toml"));
        fs::write(&c, text.replace("n_x = 600\nn_t = 5000", &format!("n_x = {n_x}\nn_t = {}", if n_x == "600" { 5000 } else { 10000 }))).unwrap();
        let out = tmp.path().join(format!("run{n_x}"));
        assert_eq!(cli(&["solve-pde", s(&c), "--out-dir", s(&out)]), 0);
        dirs.push(out);
    }
    let rep = tmp.path().join("rep");
    assert_eq!(cli(&["report", s(&dirs[0]), s(&dirs[1]), "--out-dir", s(&rep)]), 0);
    let summary = fs::read_to_string(rep.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains(",exponent,")).count(), 2);
    let long = fs::read_to_string(rep.join("long.csv")).unwrap();
    assert!(long.lines().filter(|l| l.contains("max_abs_ux")).count() > 10);
}

#[test]
fn seed_flag_beats_config_and_env_var_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("flag");
    assert_eq!(cli(&["simulate", s(&cfg), "--seed", "77", "--out-dir", s(&out)]), 0);
    assert_eq!(RunManifest::load(&out).unwrap().master_seed, 77);

    let env_out = tmp.path().join("env");
    let status = Command::new(env!("CARGO_BIN_EXE_superbsde"))
        .args(["simulate", s(&cfg)])
        .env("SUPERBSDE_SEED", "78")
        .env("SUPERBSDE_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(RunManifest::load(&env_out).unwrap().master_seed, 78);
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_superbsde");
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["fixed-point", "--al", "1.5", "--out-dir", s(tmp.path())]), 2);
    let out = Command::new(bin)
        .args(["fixed-point", "--C", "1", "--al", "0.5", "--p", "1", "--pbar", "1", "--tol", "1e-10"])
        .args(["--out-dir", s(tmp.path())])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last_trace = stdout.lines().rfind(|l| l.contains(',')).unwrap();
    let a: f64 = last_trace.split(',').nth(1).unwrap().parse().unwrap();
    assert!((a - 5.302776).abs() < 1e-6, "{last_trace}");
}

#[test]
fn supconv_grid_and_replay_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("step.toml");
    let doc = SMALL
        .replace("family = \"linear\"\nslope = 2.0", "family = \"step\"")
        .replace("l = 2.0", "l = 2.0\nc_growth = 1.0")
        + "[supconv]\nn = 1.0\nx_min = -0.25\nx_max = 0.25\npoints = 3\n";
    fs::write(&cfg, doc).unwrap();
    let out = tmp.path().join("sc");
    assert_eq!(cli(&["supconv", s(&cfg), "--out-dir", s(&out)]), 0);
    let text = fs::read_to_string(out.join("supconv.csv")).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "-0.25");
    assert_eq!(first[2], "0.75");
    // A manifest can only replay the subcommand that wrote it.
    let manifest = out.join("manifest.json");
    assert_eq!(cli(&["solve-pde", "--config", s(&manifest), "--out-dir", s(&tmp.path().join("x"))]), 2);
}

#[test]
fn verify_plan_with_pilot_calibration_records_the_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = r#"
[plan]
claim = "truncation_inertness"
seed = 2
[[plan.problems]]
[plan.problems.forward]
x0 = [0.0]
horizon = 1.0
sigma = { kind = "constant", value = 1.0 }
[plan.problems.generator]
family = "power"
c_z = 1.0
q = 3.0
[plan.problems.terminal]
family = "linear"
slope = 2.0
[plan.problems.growth]
l = 2.0
[[plan.resolutions]]
n_paths = 4000
steps = 10
bins = 10
[calibrate]
kind = "z_temporal"
n_x = 200
n_t = 1000
"#;
    let cfg = tmp.path().join("plan.toml");
    fs::write(&cfg, plan).unwrap();
    let out = tmp.path().join("v");
    assert_eq!(cli(&["verify", s(&cfg), "--out-dir", s(&out)]), 0);
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.passed, Some(true));
    assert_eq!(m.calibrated_constants.len(), 1);
    assert!(m.calibrated_constants[0].calibration.is_some());
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("status: PASS"));
}
