use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("insufficient sample: need at least {needed} points, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("likelihood undefined: {0}")]
    LikelihoodUndefined(String),

    #[error("optimizer diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("point is not critical: gradient norm {grad_norm:e} exceeds {threshold:e}")]
    NotCritical { grad_norm: f64, threshold: f64 },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim_mismatch(what: &str, expected: usize, got: usize) -> Self {
        Error::InvalidArgument(format!("{what}: expected dimension {expected}, got {got}"))
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}
