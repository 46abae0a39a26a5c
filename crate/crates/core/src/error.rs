use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("cannot load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>) -> Self {
        Error::Shape(what.into())
    }

    pub(crate) fn input(what: impl Into<String>) -> Self {
        Error::Input(what.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
