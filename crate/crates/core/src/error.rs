use std::io;

use thiserror::Error;

pub type Result<T, E = SkanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SkanError {
    /// A scalar input was NaN or infinite.
    #[error("non-finite input to {op}: k={k}, x={x}")]
    Domain { op: &'static str, k: f64, x: f64 },

    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dimension { op: &'static str, expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Wrong magic number or otherwise malformed container.
    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },

    /// Values that parse but violate a data invariant (label out of range, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SkanError {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        SkanError::Dimension { op, expected: expected.to_string(), actual: actual.to_string() }
    }
}
