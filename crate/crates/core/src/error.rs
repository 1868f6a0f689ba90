use std::path::PathBuf;

use thiserror::Error;

use crate::perfmodel::LimitingFactor;

pub type Result<T, E = VmsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VmsError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}: byte {offset}: {message}")]
    Format {
        file: String,
        offset: usize,
        message: String,
    },

    #[error("accumulator overflow in {context}")]
    Overflow { context: &'static str },

    #[error("infeasible: {message} (limiting factor: {factor})")]
    Infeasible {
        factor: LimitingFactor,
        message: String,
    },

    #[error("quantization budget {budget:e} infeasible: rmse {rmse:e} at widest formats")]
    BudgetInfeasible { budget: f64, rmse: f64 },

    #[error("pipeline deadlock at cycle {cycle}: {diagnostic}")]
    Deadlock { cycle: u64, diagnostic: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VmsError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        VmsError::Validation(msg.into())
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        VmsError::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(file: impl Into<String>, offset: usize, message: impl Into<String>) -> Self {
        VmsError::Format {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VmsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 for bad input, 3 for
    /// infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            VmsError::Infeasible { .. } | VmsError::BudgetInfeasible { .. } => 3,
            _ => 2,
        }
    }
}
