//! Config documents and the output directory of one run.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use superbsde_core::problem::config::{from_value, parse_value, problem_from_value};
use superbsde_core::{Error as CoreError, ProblemSpec};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// A parsed config document. A run manifest may stand in for the document
/// it recorded, in which case its seed comes along.
#[derive(Debug, Clone)]
pub struct Document {
    pub value: serde_json::Value,
    pub replayed_seed: Option<u64>,
}

impl Document {
    pub fn empty() -> Self {
        Document {
            value: serde_json::Value::Object(Default::default()),
            replayed_seed: None,
        }
    }

    pub fn load(path: &Path, subcommand: &str) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value = parse_value(&text)?;
        if value.get("manifest_version").is_none() {
            return Ok(Document {
                value,
                replayed_seed: None,
            });
        }
        let m: RunManifest = serde_json::from_value(value).map_err(|e| CliError::manifest(path, e.to_string()))?;
        if let Some(dir) = path.parent() {
            m.check(dir)?;
        }
        if m.subcommand != subcommand {
            return Err(CliError::Usage(format!(
                "manifest {} records `{}`, not `{subcommand}`",
                path.display(),
                m.subcommand
            )));
        }
        Ok(Document {
            value: m.config,
            replayed_seed: Some(m.master_seed),
        })
    }

    pub fn problem(&self) -> CliResult<ProblemSpec> {
        if self.value.get("problem").is_none() {
            return Err(CoreError::Config {
                path: "problem".into(),
                message: "missing `problem` table".into(),
            }
            .into());
        }
        Ok(problem_from_value(&self.value)?)
    }

    /// Deserialises the `name` table, or its defaults when absent.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> CliResult<T> {
        match self.value.get(name) {
            None => Ok(T::default()),
            Some(v) => Ok(self.required_value(name, v)?),
        }
    }

    pub fn required<T: DeserializeOwned>(&self, name: &str) -> CliResult<T> {
        let v = self.value.get(name).ok_or_else(|| {
            CliError::from(CoreError::Config {
                path: name.into(),
                message: format!("missing `{name}` table"),
            })
        })?;
        self.required_value(name, v)
    }

    fn required_value<T: DeserializeOwned>(&self, name: &str, v: &serde_json::Value) -> CliResult<T> {
        from_value(v.clone()).map_err(|e| match e {
            CoreError::Config { path, message } => CoreError::Config {
                path: format!("{name}.{path}"),
                message,
            }
            .into(),
            other => other.into(),
        })
    }

    /// Master seed: explicit flag, then a replayed manifest, then the
    /// document's `seed` key, then zero.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.replayed_seed)
            .or_else(|| self.value.get("seed").and_then(|s| s.as_u64()))
            .unwrap_or(0)
    }
}

/// Output directory of one run; remembers every file written into it.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub outputs: Vec<String>,
}

impl RunDir {
    pub fn create(path: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(RunDir {
            path,
            outputs: Vec::new(),
        })
    }

    pub fn file(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let p = self.path.join(name);
        let f = File::create(&p).map_err(|e| CliError::io(&p, e))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|e| CliError::io(&self.path.join(name), e))?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let p = self.path.join(name);
        fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }
}
