use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] beatgraph::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// 2 bad input, 3 configuration, 4 internal invariant.
    pub fn exit_code(&self) -> i32 {
        use beatgraph::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 3,
            CliError::Core(E::Invariant(_)) => 4,
            _ => 2,
        }
    }
}
