use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model order H={order}: {reason}")]
    InvalidOrder { order: u32, reason: &'static str },
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
