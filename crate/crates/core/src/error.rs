use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token id {id} outside vocabulary of width {width}")]
    TokenOutOfRange { id: usize, width: usize },
    #[error("unknown module: {kind} {id} (have {available})")]
    UnknownModule {
        kind: &'static str,
        id: usize,
        available: usize,
    },
    #[error("vocabulary mismatch: expected width {expected}, found {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{0} already exists (pass --force to overwrite)")]
    OutputExists(PathBuf),
    #[error("no seed runs found in {0}")]
    NoRuns(PathBuf),
    #[error("runs disagree: {0}")]
    InconsistentRuns(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::NonFinite { .. } | Error::NonScalarLoss(_) => "numeric",
            Error::InvalidArgument(_) | Error::TokenOutOfRange { .. } => "invalid-argument",
            Error::UnknownModule { .. } => "unknown-module",
            Error::VocabMismatch { .. } => "vocab-mismatch",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::OutputExists(_) => "output-exists",
            Error::NoRuns(_) => "no-runs",
            Error::InconsistentRuns(_) => "inconsistent-runs",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "not-found"
            }
            Error::Io { .. } => "io",
        }
    }
}
