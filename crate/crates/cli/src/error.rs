use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    /// The command ran but at least one query was flagged for review.
    #[error("{0} flagged for review")]
    Flagged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Flagged(_) => 4,
        }
    }
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub type Result<T> = std::result::Result<T, CliError>;
