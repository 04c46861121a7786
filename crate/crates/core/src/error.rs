//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes fed to a matrix or network operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Text input (manifest, annotations) failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Binary input (feature file, checkpoint, stats) is malformed.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// API misuse the caller must fix (e.g. non-scalar backward seed).
    #[error("usage error: {0}")]
    Usage(String),

    /// Metric cannot be computed on the given inputs.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient for {param} at iteration {iteration} (norm {norm})")]
    NonFiniteGradient {
        iteration: u64,
        param: &'static str,
        norm: f64,
    },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
