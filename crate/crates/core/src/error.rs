use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: malformed model, violated precondition, unsupported case.
    #[error("validation error: {0}")]
    Validation(String),
    /// A numerical procedure failed to converge or lost accuracy.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Working precision is too low for the requested quantity.
    #[error("precision error: {0}")]
    Precision(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::Numerical(_) | Error::Precision(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
