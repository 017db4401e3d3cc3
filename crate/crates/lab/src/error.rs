use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("trial {trial} (seed {seed}): {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: sparsedyn_core::Error,
    },

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Core(#[from] sparsedyn_core::Error),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
