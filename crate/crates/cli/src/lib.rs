//! Subcommand implementations behind the `luke` binary.

pub mod commands;
pub mod config;
pub mod fuzz;
pub mod gradcheck;

pub use config::{Overrides, Precision, RunConfig};

use luke_core::corpus::CorpusError;
use luke_core::model::ModelError;
use luke_core::numerics::NumericsError;
use luke_core::pretrain::PretrainError;
use luke_core::tasks::TaskError;

/// A failed command. The variant picks the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input data (exit 1).
    #[error("{0}")]
    Validation(String),
    /// Failure while running (exit 2).
    #[error("{0}")]
    Runtime(String),
    /// A check ran to completion and failed (exit 3).
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
            Self::Check(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(e) => Self::Runtime(e.to_string()),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numerics(_) | ModelError::Io(_) => Self::Runtime(e.to_string()),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        match e {
            PretrainError::Model(m) => m.into(),
            PretrainError::Numerics(_) | PretrainError::Io(_) => Self::Runtime(e.to_string()),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Model(m) => m.into(),
            TaskError::Pretrain(p) => p.into(),
            TaskError::Numerics(_) | TaskError::Io(_) => Self::Runtime(e.to_string()),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
