use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid range: lo={lo} must be below hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid step {0}: steps start at 1")]
    InvalidStep(u64),

    #[error("stage {stage} out of range 1..={stages}")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("forward cache does not belong to this stage: {0}")]
    CacheMismatch(&'static str),

    #[error("diverged at step {step}, stage {stage}")]
    Divergence { step: u64, stage: usize },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("incomplete probe window: {0}")]
    IncompleteWindow(String),

    #[error("series cannot be fitted: {0}")]
    NotFittable(String),

    #[error("weight stash: {0}")]
    Stash(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
