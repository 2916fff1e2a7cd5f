use std::path::PathBuf;

use thiserror::Error;

use crate::classifier::ClassifierError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index ({row}, {col}, {channel}) out of bounds")]
    OutOfBounds {
        row: usize,
        col: usize,
        channel: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("enumeration of {0} assignments is too large; use the Monte-Carlo estimator")]
    EnumerationTooLarge(u128),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("classifier failed at step {step}: {source}")]
    Classifier {
        step: usize,
        #[source]
        source: ClassifierError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
