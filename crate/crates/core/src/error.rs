//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: validation failures exit with 2,
//! numeric failures (singular systems, out-of-domain arguments) with 3, and
//! I/O problems with 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or physically invalid configuration and inputs.
    #[error("validation: {0}")]
    Validation(String),

    /// Numeric failure: singular system, out-of-domain argument, overflow.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Parse failure in a CSV or config file, with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
