use itlm_core::Error;

/// Failures of a command, each with a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for missing or unreadable inputs,
    /// 4 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Conflict(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => 2,
                Error::Missing(_) | Error::Format { .. } => 3,
                Error::Numeric(_) => 4,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
