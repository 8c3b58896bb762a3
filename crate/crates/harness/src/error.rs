use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("reference cache corrupted: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit status: 2 for configuration errors, 3 for numeric
    /// failures, 1 for I/O and cache problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numeric(_) => 3,
            HarnessError::Io { .. } | HarnessError::Cache(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

impl From<dualfast_core::Error> for HarnessError {
    fn from(e: dualfast_core::Error) -> Self {
        if e.is_numeric() {
            HarnessError::Numeric(e.to_string())
        } else {
            HarnessError::Config(e.to_string())
        }
    }
}
