use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("svd did not converge")]
    NoConvergence,

    #[error("out-of-order event at index {index}: timestamp {timestamp} precedes {previous}")]
    OutOfOrder {
        index: usize,
        timestamp: f64,
        previous: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
