use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("cannot parse building name {0:?}")]
    BuildingName(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("label {label} outside vocabulary of {size} classes in {entry}")]
    LabelOutOfRange { entry: String, label: usize, size: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("strict checkpoint load failed; mismatched tensors: {}", .0.join(", "))]
    StrictMismatch(Vec<String>),
    #[error("loss became NaN at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
