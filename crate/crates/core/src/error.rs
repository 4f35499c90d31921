use std::io;

use thiserror::Error;

/// Errors produced by the smokeforge engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { expected: &'static str, found: String },

    #[error("truncated data in frame {frame}: {detail}")]
    Truncated { frame: usize, detail: String },

    #[error("invalid particle in frame {frame}, {kind} particle {particle}: {reason}")]
    InvalidParticle {
        frame: usize,
        kind: &'static str,
        particle: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular covariance (condition number {0:e})")]
    SingularCovariance(f64),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("convention mismatch: expected {expected}, found {found}")]
    Convention {
        expected: &'static str,
        found: &'static str,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("session closed")]
    SessionClosed,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
