use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum ApanError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("propagation order violation: expected job {expected}, got {actual}")]
    Ordering { expected: u64, actual: u64 },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("no cached encoding for node {0}")]
    NoCachedEncoding(usize),

    #[error("{0}")]
    Degenerate(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("propagation worker failed: {0}")]
    Worker(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ApanError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> ApanError {
    ApanError::Shape {
        op,
        detail: detail.into(),
    }
}
