use mimo_core::CoreError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// Invalid inputs; one line per problem.
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self::Validation(vec![message.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
            Self::Core(e) => match e {
                CoreError::Config(_)
                | CoreError::Input(_)
                | CoreError::Image { .. }
                | CoreError::Manifest { .. }
                | CoreError::Checkpoint(_) => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
