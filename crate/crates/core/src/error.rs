use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid battery, run config, or ground-truth input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Transport failure that survived every retry.
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Retryable { attempts: u32, message: String },

    /// Backend refused the request (4xx); retrying will not help.
    #[error("backend refused request ({status}): {message}")]
    Permanent { status: u16, message: String },

    /// Stored data contradicts itself (dimension drift, duplicate keys).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Stage ordering or manifest violations.
    #[error("stage error: {0}")]
    Stage(String),

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// backend failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Stage(_) => 2,
            Error::Retryable { .. } | Error::Permanent { .. } => 3,
            _ => 1,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Retryable { .. })
    }
}
