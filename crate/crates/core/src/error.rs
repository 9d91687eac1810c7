use thiserror::Error;

use crate::lob::Invariant;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("record {index}: {invariant}")]
    Invariant { index: usize, invariant: Invariant },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("row count mismatch: {left} has {left_rows} rows, {right} has {right_rows}")]
    RowCountMismatch {
        left: String,
        left_rows: usize,
        right: String,
        right_rows: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("series too short: {op} needs more than {needed} points, got {got}")]
    TooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{count} invariant violations in strict mode (first: {first})")]
    Strict { count: usize, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
