use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, model or missing artifacts.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Certificate(String),
    #[error("{0}")]
    Refused(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::Certificate(_) => 3,
            CliError::Refused(_) => 4,
        }
    }
}
