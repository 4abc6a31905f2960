//! Crate-wide error type, grouped by failure class so callers can map errors
//! to process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, argument, or contract violation (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Missing, malformed, or inconsistent data files (exit code 3).
    #[error("data error: {0}")]
    Data(String),
    /// Completion-client transport failure (exit code 4).
    #[error("transport error: {0}")]
    Transport(String),
    /// Numerical failure such as divergence or non-finite values (exit code 5).
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Transport(_) => 4,
            Error::Numeric(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
