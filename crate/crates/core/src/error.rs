use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A text input could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary input did not follow its format.
    #[error("format error: {0}")]
    Format(String),

    /// The data does not support the requested computation.
    #[error("invalid state: {0}")]
    State(String),

    /// A mini-batch lacks a stratum that the estimator needs.
    #[error("batch composition: {0}")]
    BatchComposition(String),

    /// The configuration cannot be satisfied by the data.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite risk.
    #[error("training diverged at iteration {iteration}: risk = {risk}")]
    Divergence { iteration: usize, risk: f64 },

    /// A table would exceed the supported enumeration size.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
