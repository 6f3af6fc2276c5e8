use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ProgipError>;

#[derive(Debug, Error)]
pub enum ProgipError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("joint set is not a stage prefix: {0}")]
    InvalidPrefix(String),

    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("non-finite loss in stage {stage}")]
    NonFiniteLoss { stage: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("non-finite value in {path}: {what}")]
    NaN { path: PathBuf, what: String },

    #[error("split protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ProgipError {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        ProgipError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        ProgipError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
