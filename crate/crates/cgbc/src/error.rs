use std::process::ExitCode;

pub type AppResult<T> = Result<T, AppError>;

/// Process-level errors with their exit codes: 2 config, 3 data,
/// 4 internal invariant violation.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Config(_) => ExitCode::from(2),
            AppError::Data(_) => ExitCode::from(3),
            AppError::Internal(_) => ExitCode::from(4),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<cgbc_core::Error> for AppError {
    fn from(e: cgbc_core::Error) -> Self {
        match e {
            cgbc_core::Error::Internal { .. } => AppError::Internal(e.to_string()),
            cgbc_core::Error::InvalidParameter { .. }
            | cgbc_core::Error::InvalidPurity { .. }
            | cgbc_core::Error::InvalidNoiseRate { .. } => AppError::Config(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}
