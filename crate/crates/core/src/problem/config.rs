//! Configuration ingestion. Documents may be written as JSON or TOML; both
//! are normalised to a JSON value tree before typed deserialisation so that
//! schema violations report the dotted path of the offending key.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ProblemSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

impl ConfigFormat {
    /// JSON when the first non-blank character opens an object, TOML otherwise.
    pub fn detect(text: &str) -> Self {
        match text.trim_start().chars().next() {
            Some('{') => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

/// Parses a JSON or TOML document into a generic value tree.
pub fn parse_value(text: &str) -> Result<serde_json::Value> {
    match ConfigFormat::detect(text) {
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| {
            Error::config(
                format!("<document>:{}:{}", e.line(), e.column()),
                e.to_string(),
            )
        }),
        ConfigFormat::Toml => {
            let v: toml::Value = toml::from_str(text)
                .map_err(|e| Error::config("<document>", e.to_string().trim().to_string()))?;
            serde_json::to_value(v).map_err(|e| Error::config("<document>", e.to_string()))
        }
    }
}

/// Deserialises a value tree, reporting the path of the first schema violation.
pub fn from_value<T: DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

/// Canonical text of a document: compact JSON with lexicographically sorted keys.
pub fn canonical_text(value: &serde_json::Value) -> String {
    serde_json::to_string(value).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemDocument {
    problem: ProblemSpec,
}

/// Reads a document whose `problem` table describes a [`ProblemSpec`].
pub fn load_problem(text: &str) -> Result<ProblemSpec> {
    problem_from_value(&parse_value(text)?)
}

/// Extracts and validates the `problem` subtree of a parsed document.
pub fn problem_from_value(value: &serde_json::Value) -> Result<ProblemSpec> {
    let doc: ProblemDocument = from_value(value.clone())?;
    doc.problem.validate().map_err(|e| match e {
        Error::Config { path, message } => Error::Config {
            path: format!("problem.{path}"),
            message,
        },
        other => other,
    })?;
    Ok(doc.problem)
}
