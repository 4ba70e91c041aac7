use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed array file: {0}")]
    ArrayFormat(String),

    #[error("unsupported array dtype {0:?}; expected little-endian float32 or float64")]
    UnsupportedDtype(String),

    #[error("array payload truncated: expected {expected} values")]
    Truncated { expected: usize },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("expected a rank-{expected} tensor, found rank {found}")]
    WrongRank { expected: usize, found: usize },

    #[error("tensor contains non-finite values")]
    NonFinite,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fewer than two channels left to cluster; neighbourhood radius is undefined")]
    DegenerateClustering,

    #[error("{tensor} is not the elementwise power of g1 (max deviation {deviation:e})")]
    PowerMismatch { tensor: &'static str, deviation: f64 },

    #[error("no valid channels: every channel was classified as noise or skipped")]
    EmptyValidSet,

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("model uses operator set {found}; this engine supports up to {supported}")]
    UnsupportedOpset { found: i64, supported: i64 },

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bundle rejected: {}", .0.join("; "))]
    Bundle(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
