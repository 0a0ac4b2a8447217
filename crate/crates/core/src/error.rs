use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logit {value} at index {index}")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("vocabulary must contain at least 2 entries, got {0}")]
    VocabTooSmall(usize),

    #[error("target index {target} out of range for vocabulary of size {vocab_size}")]
    TargetOutOfRange { target: usize, vocab_size: usize },

    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("record `{record}`: {reason}")]
    Record { record: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
