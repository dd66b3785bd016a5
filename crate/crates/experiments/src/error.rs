use gnh_core::GnhError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] GnhError),

    #[error("report: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit status for this error.
    ///
    /// | code | cause |
    /// |------|-------|
    /// | 2 | usage or configuration |
    /// | 3 | file format |
    /// | 4 | shape mismatch |
    /// | 5 | resource limit |
    /// | 6 | definiteness |
    /// | 7 | non-finite values or diverged training |
    /// | 8 | I/O |
    /// | 9 | unsupported request |
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Io(_) => 8,
            Error::Core(e) => match e {
                GnhError::Format { .. } => 3,
                GnhError::Shape(_) => 4,
                GnhError::Resource(_) => 5,
                GnhError::Definiteness(_) => 6,
                GnhError::Numeric(_) | GnhError::Training(_) => 7,
                GnhError::Io(_) => 8,
                GnhError::Capability(_) => 9,
            },
        }
    }
}
