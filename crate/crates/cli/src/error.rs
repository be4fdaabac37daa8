use thiserror::Error;

/// Failures reported by the command-line front end.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    #[error("{0}")]
    Validation(String),
    /// The estimator, detector or simulator failed.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

impl From<ssmrcd::Error> for CliError {
    fn from(e: ssmrcd::Error) -> Self {
        match e {
            ssmrcd::Error::InvalidArgument(_) => CliError::Validation(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Validation(msg.into()))
}

pub(crate) fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}
