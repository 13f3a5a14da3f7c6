use std::fmt;

use prv_core::PrvError;

/// CLI failure classes, each with its own exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Precision(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "E_VALIDATION",
            CliError::Precision(_) => "E_PRECISION",
            CliError::Io(_) => "E_IO",
            CliError::Numerical(_) => "E_NUMERICAL",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Precision(_) => 3,
            CliError::Io(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Precision(m) | CliError::Io(m) | CliError::Numerical(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the message on one line so the error stays machine-parsable.
        write!(f, "error: {}: {}", self.code(), self.message().replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

impl From<PrvError> for CliError {
    fn from(e: PrvError) -> Self {
        match e {
            PrvError::Precision(_) => CliError::Precision(e.to_string()),
            PrvError::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
