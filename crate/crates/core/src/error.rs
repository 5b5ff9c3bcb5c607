use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the evofuse algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation failed for genome {genome:?}: {reason}")]
    Evaluation { genome: Vec<f64>, reason: String },

    #[error("optimization diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
