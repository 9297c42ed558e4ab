//! The `savehr` pipeline: generate populations, build cohorts, train,
//! evaluate across populations and export attention artifacts.
//!
//! Every command reads and writes under one run directory and leaves a
//! manifest holding the full effective configuration, so any manifest can
//! be fed back as `--config` to replay the pipeline.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{execute, Command, Layout};
pub use config::{RunConfig, Settings};

/// Failures grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0} already exists (use --force to overwrite)")]
    Exists(String),
    #[error(transparent)]
    Data(savehr::Error),
}

impl From<savehr::Error> for CliError {
    fn from(e: savehr::Error) -> Self {
        match e {
            savehr::Error::Config(m) => CliError::Config(m),
            other => CliError::Data(other),
        }
    }
}

impl CliError {
    /// 2 for configuration and usage problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Exists(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}
