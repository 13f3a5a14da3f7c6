use thiserror::Error;

/// Errors produced by the accounting library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrvError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported mechanism: {0}")]
    Unsupported(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} = {value} is outside the valid window [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("precision floor: {0}")]
    Precision(String),

    #[error("numerical guard tripped: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, PrvError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(PrvError::Parameter(msg.into()))
}
