use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("tape is not topologically ordered: node {node} reads node {input}")]
    CycleDetected { node: usize, input: usize },

    #[error("token {token} is outside the vocabulary of size {size}")]
    TokenOutOfRange { token: usize, size: usize },

    #[error("label of length {len} exceeds the maximum decode length {max}")]
    LabelTooLong { len: usize, max: usize },

    #[error("vocabulary mismatch: checkpoint has {checkpoint:?}, dataset has {dataset:?}")]
    VocabularyMismatch { checkpoint: String, dataset: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0} is locked by another process (remove the .lock file if it is stale)")]
    Locked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short, stable category name used for machine-parsable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape",
            Error::Empty(_) => "empty-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidDistribution(_) => "invalid-distribution",
            Error::NonScalarLoss(_) | Error::CycleDetected { .. } => "autodiff",
            Error::TokenOutOfRange { .. } | Error::LabelTooLong { .. } => "label",
            Error::VocabularyMismatch { .. } => "vocabulary-mismatch",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Locked(_) => "locked",
            Error::Io { .. } => "io",
        }
    }
}
