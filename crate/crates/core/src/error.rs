use std::io;

use thiserror::Error;

/// Errors produced by the analysis and generation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trace has {0} samples, at least 2 are required")]
    EmptyTrace(usize),

    #[error("counter decreased at sample {index} (reset); split the trace first")]
    CounterReset { index: usize },

    #[error("sample times must be strictly increasing (sample {index})")]
    NonMonotonicTime { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training requires two classes, found {0}")]
    SingleClass(usize),

    #[error("solver did not converge within {iterations} iterations (gap {gap:.3e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => Error::Io(e),
                _ => unreachable!(),
            }
        } else {
            Error::Schema(err.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Schema(err.to_string())
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(err: toml::de::Error) -> Self {
        Error::Config(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
