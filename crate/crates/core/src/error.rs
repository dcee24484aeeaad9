use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Computation,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Computation => 2,
            ErrorKind::Io => 3,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Validation => "E_VALIDATION",
            ErrorKind::Computation => "E_COMPUTATION",
            ErrorKind::Io => "E_IO",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("filter design failed: {0}")]
    Design(String),

    #[error("modal bank design failed at mode {mode}: {reason}")]
    Modal { mode: u32, reason: String },

    #[error("delay budget infeasible: {0}")]
    Budget(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("sample rate mismatch: {signal} Hz vs {ir} Hz")]
    SampleRateMismatch { signal: f64, ir: f64 },

    #[error("no periodicity found: {0}")]
    NoPeriodicity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Wav { path: PathBuf, reason: String },
}

impl Error {
    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse(_) | Error::Validation { .. } | Error::SampleRateMismatch { .. } => {
                ErrorKind::Validation
            }
            Error::Design(_)
            | Error::Modal { .. }
            | Error::Budget(_)
            | Error::Estimation(_)
            | Error::NoPeriodicity(_) => ErrorKind::Computation,
            Error::Io { .. } | Error::Wav { .. } => ErrorKind::Io,
        }
    }
}
