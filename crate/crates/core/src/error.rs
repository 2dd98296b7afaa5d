use std::path::PathBuf;

use crate::geometry::PoseSE3;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    DegenerateRotation { angle: f64 },

    #[error("not enough points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("registration failed at iteration {iteration}: no correspondences within range")]
    RegistrationFailed {
        iteration: usize,
        last_estimate: Box<PoseSE3>,
    },

    #[error("mask excludes every pixel")]
    DegenerateMask,

    #[error("scene renders nothing at the requested view")]
    EmptyScene,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown {what} '{name}'")]
    UnknownKind { what: &'static str, name: String },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
