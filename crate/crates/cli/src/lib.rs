//! Configuration-driven experiment runner for `sagabed`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use commands::{cmd_nmc_ref, cmd_posterior, cmd_run, cmd_validate_config, RunOptions};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Unsupported(_) => 4,
        }
    }
}

impl From<sagabed::Error> for CliError {
    fn from(e: sagabed::Error) -> Self {
        match e {
            sagabed::Error::Config(msg) => CliError::Config(msg),
            e @ sagabed::Error::Unsupported { .. } => CliError::Unsupported(e.to_string()),
            sagabed::Error::Epoch { epoch, source } if matches!(*source, sagabed::Error::Unsupported { .. }) => {
                CliError::Unsupported(format!("epoch {epoch}: {source}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}
