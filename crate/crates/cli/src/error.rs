use dictnet_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn data(what: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{what}: {e}"))
    }

    /// 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Numerical(_) | CliError::Core(Error::Diverged { .. }) => 4,
            CliError::Data(_) | CliError::Core(_) => 3,
        }
    }
}
