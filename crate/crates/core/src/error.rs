use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnhError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("matrix is not positive definite: {0}")]
    Definiteness(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GnhError {
    pub fn shape(msg: impl Into<String>) -> Self {
        GnhError::Shape(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        GnhError::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = GnhError> = std::result::Result<T, E>;
