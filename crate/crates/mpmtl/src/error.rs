use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a documented precondition (non-finite input,
    /// out-of-range parameter, empty collection, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Iterate left the trust region (non-finite or astronomically large).
    #[error("optimization diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
