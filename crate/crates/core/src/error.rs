use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative age {0}")]
    NegativeAge(f64),

    #[error("age bin edges must be finite and strictly ascending: {0:?}")]
    BadBinEdges(Vec<f64>),

    #[error("selection is empty")]
    EmptySelection,

    #[error("distribution is degenerate: {0}")]
    DegenerateDistribution(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("latent vector contains a non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no minority-gender record available for cell {0}")]
    UnfillableCell(String),

    #[error("unknown record id {0}")]
    UnknownRecord(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("malformed {what} at {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("unsupported manifest version {0}")]
    SchemaVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
