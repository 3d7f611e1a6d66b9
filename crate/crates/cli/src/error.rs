use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] geotopic::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                geotopic::Error::EmptyCorpus(_) => EXIT_EMPTY,
                geotopic::Error::Solver { .. } | geotopic::Error::NonFiniteObjective(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
