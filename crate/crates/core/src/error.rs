use thiserror::Error;

/// Failure modes shared by every numerical module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular argument: {0}")]
    Singular(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("no classical path: {0}")]
    NoPath(String),

    #[error("numeric failure at s = {s}: {detail}")]
    Numeric { s: f64, detail: String },

    #[error("accuracy target missed in {context}: achieved {achieved:e}, requested {requested:e}")]
    Accuracy {
        context: String,
        achieved: f64,
        requested: f64,
    },

    #[error("range error: {0}")]
    Range(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, EcdError>;

pub(crate) fn domain(msg: impl Into<String>) -> EcdError {
    EcdError::Domain(msg.into())
}
