use countreg_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Output(_) => 2,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_)
            | CoreError::Parse { .. }
            | CoreError::MissingValue { .. }
            | CoreError::RaggedRow { .. }
            | CoreError::ColumnNotFound(_)
            | CoreError::DuplicateRole { .. }
            | CoreError::DuplicateColumn(_)
            | CoreError::InvalidData { .. }
            | CoreError::InvalidSplit(_)
            | CoreError::InfeasibleTransformation { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
