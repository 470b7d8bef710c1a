use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site count mismatch: expected {expected}, got {got}")]
    SiteMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension 2^{n} exceeds the cap 2^{cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("malformed state file: {0}")]
    Format(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::SiteMismatch { .. }
                | Error::Dimension(_)
                | Error::Invalid(_)
                | Error::SizeCap { .. }
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
