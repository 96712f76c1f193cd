//! Crate-wide error type with process exit codes for the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters (exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or missing data (exit code 3).
    #[error("data error: {0}")]
    Data(String),

    /// CSV parse failure at a specific 1-based line (exit code 3).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training failure such as a non-finite loss (exit code 4).
    #[error("training error: {0}")]
    Training(String),

    /// Broken internal contract between modules (exit code 4).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract: 0 ok, 2 config error, 3 data error, 4 training error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 3,
            Error::Training(_) | Error::Contract(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
