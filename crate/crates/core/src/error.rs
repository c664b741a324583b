//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the pqdast library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{path}: {msg}")]
    BadFile { path: PathBuf, msg: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint schema version {got} not supported (expected {expected})")]
    SchemaVersion { expected: u32, got: u32 },

    #[error("depth predictor failed: {0}")]
    DepthPredictor(String),

    #[error("export error: {0}")]
    Export(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn bad_file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::BadFile { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch { expected: expected.into(), got: got.into() }
    }
}
