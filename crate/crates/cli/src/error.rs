use std::fmt;

use signalmine::Error as CoreError;

/// Failure class, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Data,
    Runtime,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage | ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Runtime => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Runtime => "runtime",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{detail}")]
pub struct CliError {
    pub class: ErrorClass,
    pub detail: String,
}

impl CliError {
    pub fn new(class: ErrorClass, detail: impl Into<String>) -> Self {
        Self {
            class,
            detail: detail.into(),
        }
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::Usage, detail)
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, detail)
    }

    pub fn data(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::Data, detail)
    }

    pub fn runtime(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::Runtime, detail)
    }

    /// The single stderr line: `error[class]: detail`, newlines flattened.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.class.name(), self.detail.replace('\n', " "))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let class = match &e {
            CoreError::Config(_) | CoreError::KernelMismatch { .. } => ErrorClass::Config,
            CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::Data
            }
            CoreError::Io { .. } => ErrorClass::Runtime,
            CoreError::Csv { .. }
            | CoreError::InvalidData(_)
            | CoreError::NoExposure { .. }
            | CoreError::SubintervalMismatch(..)
            | CoreError::ScopeMismatch
            | CoreError::NoPositives
            | CoreError::Checkpoint(_) => ErrorClass::Data,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
