use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input buffer violated a structural precondition (extent mismatch,
    /// wrong channel count, empty stack, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A scalar parameter was outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A range request with `hi <= lo` or an otherwise degenerate interval.
    #[error("invalid range: {0}")]
    InvalidRange(String),

    /// A file did not conform to its format; `offset` is the byte position
    /// at which parsing gave up.
    #[error("{path}: format error at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    /// Metric evaluation found no pixel that is valid in every operand.
    #[error("empty valid mask: no pixel is valid in all inputs")]
    EmptyMask,

    /// Values outside the mathematical domain of an operation
    /// (e.g. non-positive depths fed to a log or ratio metric).
    #[error("domain error: {0}")]
    Domain(String),

    /// Training diverged; reported with enough context to reproduce.
    #[error("non-finite loss {value} at epoch {epoch}, sample {sample}")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        value: f64,
    },

    /// An underlying I/O failure, annotated with the file involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }
}
