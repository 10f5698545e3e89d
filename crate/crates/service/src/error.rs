use std::path::PathBuf;

use thiserror::Error;

pub type ServiceResult<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("issue {0} not found")]
    NotFound(String),

    #[error("{change_id} is not a suspect of this issue")]
    NotASuspect { change_id: String },

    #[error("invalid request: {0}")]
    Invalid(String),

    #[error("no model loaded")]
    ModelUnavailable,

    #[error("unauthorized")]
    Unauthorized,

    #[error("corrupt event log {path} at line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] culprit::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotASuspect { .. } => "not_a_suspect",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::ModelUnavailable => "model_unavailable",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::CorruptLog { .. } => "corrupt_log",
            ServiceError::Core(e) => e.kind(),
            ServiceError::Io(_) => "io",
        }
    }
}
