//! Command implementations for the `copsd` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod pretrain;
pub mod report;

use std::path::Path;

use thiserror::Error;

use copsd::corpus::CorpusError;
use copsd::distill::DistillError;
use copsd::eval::EvalError;
use copsd::model::{CheckpointError, ModelError};

pub use commands::{run, Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Distill(DistillError),
    #[error(transparent)]
    Pretrain(pretrain::PretrainError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 usage, 3 data or integrity, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Numeric(_) => 4,
            CliError::Distill(DistillError::NonFinite { .. }) => 4,
            CliError::Distill(DistillError::Config(_)) => 2,
            CliError::Pretrain(pretrain::PretrainError::NonFinite { .. }) => 4,
            CliError::Pretrain(pretrain::PretrainError::Config(_)) => 2,
            CliError::Model(ModelError::Config(_)) => 2,
            CliError::Eval(EvalError::Param(_)) => 2,
            _ => 3,
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Checkpoint(c) => CliError::Checkpoint(c),
            e => CliError::Distill(e),
        }
    }
}

impl From<pretrain::PretrainError> for CliError {
    fn from(e: pretrain::PretrainError) -> Self {
        CliError::Pretrain(e)
    }
}
