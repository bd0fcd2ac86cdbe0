#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A check ran and did not pass.
    #[error("{0}")]
    CheckFailed(String),

    #[error("{0}")]
    Usage(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Core(#[from] weightcell::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Core(weightcell::Error::NonFiniteGradient { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}
