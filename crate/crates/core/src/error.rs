use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    #[error("fidelity undefined: total output power is zero")]
    UndefinedFidelity,

    #[error("click probability undefined: {0}")]
    UndefinedProbability(String),

    #[error("unknown symbol index {index} (alphabet size {size})")]
    UnknownSymbol { index: usize, size: usize },

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("insufficient key material: {0}")]
    InsufficientKey(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Checks `cond`, otherwise returns an invalid-parameter error.
pub(crate) fn ensure(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(name, reason))
    }
}
