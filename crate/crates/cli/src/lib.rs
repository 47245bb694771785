//! Experiment runner for the multilevel QMC eigenvalue estimator: TOML
//! configuration, on-disk CBC cache, CSV artifacts and run manifests.

use std::path::{Path, PathBuf};

pub mod artifacts;
pub mod cache;
pub mod config;
pub mod runner;

pub use config::ExperimentConfig;
pub use runner::{execute, Command, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mlqmc_evp::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Short machine-readable class of the failure.
    pub fn kind(&self) -> &'static str {
        use mlqmc_evp::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidArgument(_) | E::Guard(_)) => "config",
            CliError::Core(E::BudgetExceeded { .. }) => "budget",
            CliError::Core(e) if e.is_solver_failure() => "solver",
            CliError::Io { .. } | CliError::Csv(_) | CliError::Core(E::Io(_)) => "io",
            _ => "internal",
        }
    }

    /// 2 config, 3 budget exceeded, 4 solver failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "budget" => 3,
            "solver" => 4,
            _ => 1,
        }
    }
}
