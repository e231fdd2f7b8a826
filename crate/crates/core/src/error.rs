use std::io;

use thiserror::Error;

/// Errors raised anywhere in the mapping pipeline.
#[derive(Debug, Error)]
pub enum GpsmError {
    /// Caller-supplied data violates a precondition (shapes, labels, ranges).
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or solve failed even after jitter.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A file could not be decoded. `offset` is the byte position of the fault.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// AUC could not be computed for any class.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl GpsmError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        GpsmError::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        GpsmError::Numerical(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        GpsmError::Parse {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GpsmError>;
