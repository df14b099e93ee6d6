use alloc::string::String;

pub type Result<T> = core::result::Result<T, GmlError>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GmlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid site spec: {0}")]
    InvalidSpec(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("non-finite parameters at site {site} in round {round}")]
    NonFiniteParams { site: u32, round: u64 },
    #[error("missing model for {0}")]
    MissingModel(String),
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> GmlError {
    GmlError::InvalidInput(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> GmlError {
    GmlError::InvalidConfig(msg.into())
}
