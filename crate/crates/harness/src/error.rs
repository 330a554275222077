use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] mfy_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// 2 config error, 3 non-convergence, 4 blow-up, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::NotConverged(_) => 3,
            HarnessError::Core(mfy_core::Error::BlowUp { .. }) => 4,
            HarnessError::Core(mfy_core::Error::InvalidParameter(_)) => 2,
            _ => 1,
        }
    }
}
