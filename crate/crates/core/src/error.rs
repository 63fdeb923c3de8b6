use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LacError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LacError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: row {row}, column {column:?}: {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("class {class} has {available} examples left but {required} are required")]
    InsufficientClass {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("non-finite objective at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LacError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LacError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LacError::Io {
            path: path.into(),
            source,
        }
    }
}
