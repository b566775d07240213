use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid pool: {0}")]
    InvalidPool(String),

    #[error("{path}: row {row}: {msg}")]
    Format {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("{path}: malformed header: {msg}")]
    Header { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("class {class} has {available} training examples but {required} were requested")]
    InsufficientClass {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("example {0} is already labeled or out of range")]
    BadQuery(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("non-finite value in input at row {0}")]
    NonFinite(usize),

    #[error("covariance factorization failed after shrinkage {0}")]
    Factorization(f64),

    #[error("mixture component {0} collapsed")]
    Collapse(usize),

    #[error("unlabeled pool is empty")]
    EmptyPool,

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
