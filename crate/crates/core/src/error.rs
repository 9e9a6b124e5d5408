use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("point outside model domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("solver failure{}: {message}", bus.map(|b| format!(" on bus {b}")).unwrap_or_default())]
    Solver { bus: Option<usize>, message: String },

    #[error("case file error at line {line}, column {column}: {message}")]
    Case {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn solver(bus: Option<usize>, message: impl Into<String>) -> Self {
        Error::Solver {
            bus,
            message: message.into(),
        }
    }
}
