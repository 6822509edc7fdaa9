//! Deterministic experiment runner for `tailrisk`: training, evaluation,
//! the quantile benchmark and diagnostics, all writing plot-ready CSV.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use thiserror::Error;

use tailrisk::eval::EvalError;
use tailrisk::meta::MetaError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::NonFinite { .. } | MetaError::Autodiff(_) => CliError::Numeric(e.to_string()),
            MetaError::Checkpoint(_) => CliError::Checkpoint(e.to_string()),
            MetaError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Meta(m) => m.into(),
            EvalError::Empty | EvalError::Risk(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
