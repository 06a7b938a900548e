use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("kernel {kh}x{kw} is larger than image {h}x{w}")]
    KernelTooLarge {
        kh: usize,
        kw: usize,
        h: usize,
        w: usize,
    },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },

    #[error("weights error: {0}")]
    Weights(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Io { .. } | Error::Codec(_) | Error::Parse(_) | Error::Weights(_) => 3,
            Error::Numerical { .. } | Error::NonFinite(_) => 4,
            Error::ShapeMismatch { .. }
            | Error::KernelTooLarge { .. }
            | Error::InvalidKernel(_)
            | Error::InvalidImage(_) => 2,
        }
    }
}
