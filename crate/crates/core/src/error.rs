use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class {0} has no member pixels")]
    EmptyClass(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: String, found: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("score is undefined")]
    Undefined,

    #[error("at least two defined unit scores are required, got {0}")]
    TooFewUnits(usize),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("malformed tensor header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("tensor shape {0:?} overflows the addressable size")]
    ShapeOverflow(Vec<usize>),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },

    #[error("dangling reference: {} does not exist", .0.display())]
    DanglingReference(PathBuf),

    #[error("i/o failure: {0}")]
    IoFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
