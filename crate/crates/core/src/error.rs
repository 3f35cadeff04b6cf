use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected vocabulary of {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid logits: {0}")]
    InvalidLogits(String),

    #[error("distribution has zero mass")]
    ZeroMass,

    #[error("token {token} has zero draft probability")]
    ZeroDraftProbability { token: usize },

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("enumeration of {requested} outcomes exceeds budget of {budget}")]
    Size { requested: f64, budget: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },

    #[error("model has no unconditional variant but cfg scale is {0}")]
    MissingUnconditional(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(field: &str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
