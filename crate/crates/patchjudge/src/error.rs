//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for every fallible operation in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and a parameter) had incompatible shapes.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An input was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value was invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violated a contract (bad token id, unlabeled sample, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A unified diff could not be parsed.
    #[error("malformed diff: {0}")]
    MalformedDiff(String),

    /// The tensor container bytes were not a valid PJT1 stream.
    #[error("container error: {0}")]
    Container(String),

    /// A saved model did not match its sidecar configuration.
    #[error("model load error: {0}")]
    ModelLoad(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
