use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's preconditions.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A NaN or infinity was produced or supplied.
    #[error("numeric error: non-finite value in {0}")]
    NonFinite(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(#[from] DataError),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while reading or validating on-disk data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed header {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at element {index} of {path}")]
    NonFiniteValue { path: PathBuf, index: usize },

    #[error("invalid labels in {path}: {detail}")]
    InvalidLabels { path: PathBuf, detail: String },

    #[error("malformed checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("data does not match model: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::NonFinite(_) | Error::Divergence { .. } => 3,
        }
    }
}
