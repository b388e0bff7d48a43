//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimbaError {
    #[error("missing dataset file: {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Format {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("dataset inconsistency: {0}")]
    Consistency(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Dimension(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimbaError>;

impl SimbaError {
    /// CLI exit code: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimbaError::Argument(_) | SimbaError::Config(_) => 1,
            SimbaError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
