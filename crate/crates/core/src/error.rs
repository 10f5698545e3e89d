use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error at line {line} (byte offset {offset}): {message}")]
    Format {
        line: usize,
        offset: u64,
        message: String,
    },

    #[error("insufficient pool: need at least {needed} records, got {got}")]
    InsufficientPool { needed: usize, got: usize },

    #[error("insufficient distinct pool: need at least {needed} distinct culprit ids, got {got}")]
    InsufficientDistinctPool { needed: usize, got: usize },

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error("label {label} out of range for {candidates} candidates")]
    LabelOutOfRange { label: usize, candidates: usize },

    #[error("scorer kind {0} is not trainable")]
    NotTrainable(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("invalid model artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Format { .. } => "format",
            Error::InsufficientPool { .. } => "insufficient_pool",
            Error::InsufficientDistinctPool { .. } => "insufficient_distinct_pool",
            Error::NumericInput(_) => "numeric_input",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::NotTrainable(_) => "not_trainable",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::Artifact { .. } => "artifact",
            Error::Io(_) => "io",
        }
    }
}
