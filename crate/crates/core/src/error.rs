use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {index}: missing or invalid field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("duplicate uid {uid:?} (record {index})")]
    DuplicateUid { uid: String, index: usize },
    #[error("case {uid:?} (record {index}) has no label")]
    MissingLabel { uid: String, index: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid template set: {0}")]
    InvalidTemplates(String),
    #[error("infeasible generator configuration: {0}")]
    Infeasible(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid attention pattern: {0}")]
    InvalidPattern(String),
    #[error("shape mismatch for {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("input out of bounds: {0}")]
    OutOfBounds(String),
    #[error("measurement span mismatch: {0}")]
    SpanMismatch(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidTemplates(_)
            | Error::Infeasible(_)
            | Error::InvalidPattern(_)
            | Error::UnknownParameter(_) => ErrorKind::Config,
            Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
