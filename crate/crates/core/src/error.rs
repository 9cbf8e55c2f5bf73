use std::path::PathBuf;

use thiserror::Error;

/// Every failure the forecasting stack can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the filesystem or on-disk content rather than
    /// by the caller's inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
