use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionError {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("least-squares normal equations are singular (pivot {pivot:e} at column {column})")]
    SingularFit { column: usize, pivot: f64 },

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("ensemble has not been characterized: {0}")]
    NotCharacterized(&'static str),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("regime index {index} out of range (plant has {count} regimes)")]
    RegimeError { index: usize, count: usize },

    #[error("invalid configuration at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::DimensionError {
            expected,
            got,
            context,
        }
    }
}
