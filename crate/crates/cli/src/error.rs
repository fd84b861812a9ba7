use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cops_core::Error),
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 provider.
    pub fn exit_code(&self) -> i32 {
        use cops_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Provider(_) | E::RankerUnavailable(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<cops_core::cognition::ProviderError> for CliError {
    fn from(e: cops_core::cognition::ProviderError) -> Self {
        CliError::Core(e.into())
    }
}
