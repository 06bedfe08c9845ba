use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the benchmark.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("requested split sizes {requested} exceed dataset size {available}")]
    Size { requested: usize, available: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}: {source}")]
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

    /// True for errors caused by user-supplied configuration or inputs rather
    /// than by a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Validation(_) | Error::Size { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
