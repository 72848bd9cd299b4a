//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metrics error at line {line}: {msg}")]
    Metrics { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LabError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
