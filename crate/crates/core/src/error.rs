use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("node id {id} out of range for graph with {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("discrete attribute file contains non-binary value {value} at row {row}")]
    NonBinaryAttribute { row: usize, value: f64 },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite loss encountered in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("injection plan violates its invariants: {0}")]
    PlanViolation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model was built for a different graph (checksum {expected:#018x}, got {actual:#018x})")]
    GraphMismatch { expected: u64, actual: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
