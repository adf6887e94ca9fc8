use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("training diverged at step {0}")]
    Diverged(usize),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] beamkit_core::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub(crate) fn shape_err(op: &'static str, message: impl Into<String>) -> Error {
    Error::Shape {
        op,
        message: message.into(),
    }
}
