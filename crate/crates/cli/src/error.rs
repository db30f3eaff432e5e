use std::path::{Path, PathBuf};

use superbsde_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Usage(String),

    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn manifest(path: &Path, message: impl Into<String>) -> Self {
        CliError::Manifest {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// 2 for anything the user can fix in the inputs, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Manifest { .. } | CliError::Io { .. } | CliError::Json(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Config { .. }
                | CoreError::Expression { .. }
                | CoreError::InvalidArgument(_)
                | CoreError::Kind { .. }
                | CoreError::Growth(_)
                | CoreError::Cfl { .. }
                | CoreError::Contract(_)
                | CoreError::Dominance(_)
                | CoreError::Calibration(_)
                | CoreError::Io(_) => 2,
                _ => 1,
            },
            CliError::Csv(_) | CliError::Threads(_) => 1,
        }
    }
}
