//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {details}")]
    Shape { op: String, details: String },

    #[error("unknown user id: {0}")]
    UnknownUser(String),

    #[error("not enough unlinked users to sample candidates for user {0}")]
    InsufficientNegatives(String),

    #[error("non-finite gradient in parameter {0}")]
    NanGradient(String),

    #[error("non-finite loss at epoch {epoch} batch {batch}; pairs: {pairs}")]
    NanLoss {
        epoch: usize,
        batch: usize,
        pairs: String,
    },

    #[error("malformed dataset file: {0}")]
    DatasetFormat(String),

    #[error("malformed checkpoint file: {0}")]
    CheckpointFormat(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
