use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("empty audio: {0}")]
    EmptyAudio(String),

    #[error("sample out of range at channel {channel}, index {index}: {value}")]
    OutOfRange {
        channel: usize,
        index: usize,
        value: f64,
    },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("rt60 of {rt60} s is unreachable for this room (absorption {absorption:.3} > 1)")]
    UnreachableRt60 { rt60: f64, absorption: f64 },

    #[error("scene placement failed after {0} attempts")]
    Placement(usize),

    #[error("zero-power signal: {0}")]
    ZeroPower(String),

    #[error("all-zero mask at frequency bin {0}")]
    EmptyMask(usize),

    #[error("singular system at frequency bin {0}")]
    Singular(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
