//! Aggregation of finished runs into one summary table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::document::RunDir;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub subcommand: String,
    pub passed: Option<bool>,
    /// `(key, value)` pairs read back from `statistics.csv`.
    pub statistics: Vec<(String, String)>,
}

impl RunSummary {
    pub fn status(&self) -> &'static str {
        match self.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "n/a",
        }
    }
}

fn read_pairs(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::manifest(path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::manifest(path, e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

pub fn load_run(dir: &Path) -> CliResult<RunSummary> {
    let m = RunManifest::load(dir)?;
    let statistics = if m.outputs.iter().any(|o| o == "statistics.csv") {
        read_pairs(&dir.join("statistics.csv"))?
            .into_iter()
            .filter_map(|r| match r.as_slice() {
                [k, v] => Some((k.clone(), v.clone())),
                _ => None,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        subcommand: m.subcommand,
        passed: m.passed,
        statistics,
    })
}

/// Writes `summary.txt`, `summary.csv` and `long.csv`; returns whether
/// every run that makes a claim passed.
pub fn write_report(dirs: &[PathBuf], out: &mut RunDir) -> CliResult<(bool, String)> {
    let runs: Vec<RunSummary> = dirs.iter().map(|d| load_run(d)).collect::<CliResult<_>>()?;
    let all_pass = runs.iter().all(|r| r.passed != Some(false));

    let mut text = String::new();
    let _ = writeln!(text, "{:<40} {:<18} {:<6}", "run", "subcommand", "status");
    for r in &runs {
        let _ = writeln!(text, "{:<40} {:<18} {:<6}", r.dir.display(), r.subcommand, r.status());
        for (k, v) in &r.statistics {
            let _ = writeln!(text, "    {k} = {v}");
        }
    }
    let _ = writeln!(
        text,
        "{} run(s), {} failed",
        runs.len(),
        runs.iter().filter(|r| r.passed == Some(false)).count()
    );
    out.text("summary.txt", &text)?;

    let mut rows = Vec::new();
    for r in &runs {
        let run = r.dir.display().to_string();
        rows.push(vec![run.clone(), r.subcommand.clone(), r.status().into(), String::new(), String::new(), format!("{run}/manifest.json")]);
        for (k, v) in &r.statistics {
            rows.push(vec![run.clone(), r.subcommand.clone(), r.status().into(), k.clone(), v.clone(), format!("{run}/statistics.csv")]);
        }
    }
    out.csv("summary.csv", &["run", "subcommand", "status", "key", "value", "artifact"], rows)?;

    let mut long = Vec::new();
    for r in &runs {
        let path = r.dir.join("series.csv");
        if path.is_file() {
            for row in read_pairs(&path)? {
                if let [series, x, y] = row.as_slice() {
                    long.push(vec![r.dir.display().to_string(), series.clone(), x.clone(), y.clone()]);
                }
            }
        }
    }
    out.csv("long.csv", &["run", "series", "x", "y"], long)?;
    Ok((all_pass, text))
}
