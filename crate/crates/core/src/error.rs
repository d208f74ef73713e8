use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} views")]
    ViewIndex { index: usize, len: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("corrupt payload in {}: {reason}", .path.display())]
    CorruptPayload { path: PathBuf, reason: String },

    #[error("manifest error in {}: {reason}", .path.display())]
    Manifest { path: PathBuf, reason: String },

    #[error("version mismatch in {}: expected {expected}, found {found}", .path.display())]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit status reported by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::MissingFile(_) => 4,
            Error::CorruptPayload { .. } => 5,
            Error::Manifest { .. } => 6,
            Error::Version { .. } => 7,
            Error::ShapeMismatch { .. } => 8,
            Error::InvalidArgument(_) | Error::Dimension(_) | Error::ViewIndex { .. } => 9,
            Error::NonFinite(_) => 10,
            Error::Invariant(_) => 11,
            Error::Internal(_) => 12,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.into());
        }
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
