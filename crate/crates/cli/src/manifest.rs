//! Run manifests: one `manifest.json` per output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use superbsde_core::bounds::BoundParams;
use superbsde_core::problem::config::canonical_text;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub subcommand: String,
    /// Parsed configuration document; replaying the manifest runs it again.
    pub config: serde_json::Value,
    /// SHA-256 of the canonical text of `config`.
    pub config_digest: String,
    pub master_seed: u64,
    pub module_versions: BTreeMap<String, String>,
    pub resolutions: serde_json::Value,
    #[serde(default)]
    pub calibrated_constants: Vec<BoundParams>,
    /// File names relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// `None` for runs that make no claim.
    pub passed: Option<bool>,
    pub wall_clock_seconds: f64,
    pub threads: Option<usize>,
}

pub fn digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(canonical_text(config).as_bytes()))
}

pub fn module_versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("superbsde-core".to_string(), superbsde_core::VERSION.to_string()),
        ("superbsde-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// Reads and checks the manifest in `dir`.
    pub fn load(dir: &Path) -> CliResult<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::manifest(&path, e.to_string()))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::manifest(&path, e.to_string()))?;
        m.check(dir)?;
        Ok(m)
    }

    /// The digest must match the stored config and every listed output must exist.
    pub fn check(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        if self.manifest_version != MANIFEST_VERSION {
            return Err(CliError::manifest(&path, format!("unsupported version {}", self.manifest_version)));
        }
        if digest(&self.config) != self.config_digest {
            return Err(CliError::manifest(&path, "config digest does not match the stored config"));
        }
        if let Some(missing) = self.outputs.iter().find(|o| !dir.join(o).is_file()) {
            return Err(CliError::manifest(&path, format!("listed output `{missing}` is missing")));
        }
        Ok(())
    }
}
