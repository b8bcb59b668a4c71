//! Error type shared across the pipeline.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched or invalid configuration (sample rates, mel settings, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// A requested window or index falls outside the available data.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// An operation needs information the input cannot provide
    /// (e.g. a frame without ground-truth face parameters).
    #[error("capability error: {0}")]
    Capability(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A checkpoint or data file failed to parse.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
