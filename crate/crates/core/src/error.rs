use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid architecture {sizes:?}: {reason}")]
    Architecture { sizes: Vec<usize>, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("batch normalization in training mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("need at least {needed} training samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("feature {index} = {value} is outside [0,1]; input was not scaled")]
    Unscaled { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("both classes must be present: {0}")]
    SingleClass(&'static str),

    #[error("malicious pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("{path}: row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("model format: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input or configuration rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Io { .. })
    }
}
