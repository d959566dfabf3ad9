use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: (usize, usize), actual: (usize, usize) },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("inconsistent sensor spec: {0}")]
    InconsistentSpec(String),

    #[error("scan has no line indices")]
    MissingLineIndex,

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing key `{key}` in {path}")]
    MissingKey { path: PathBuf, key: String },

    #[error("truncated LiDAR file {path}: {len} bytes, trailing record starts at byte offset {offset}")]
    Truncated { path: PathBuf, len: u64, offset: u64 },

    #[error("depth {depth} m exceeds the largest encodable depth {max} m")]
    DepthOverflow { depth: f64, max: f64 },

    #[error("scene spec: {0}")]
    Scene(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
