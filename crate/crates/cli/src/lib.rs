//! Experiment front end: flat-file configs, the four subcommands
//! (`simulate`, `estimate`, `analyze`, `recover`), and their CSV artifacts.

pub mod commands;
pub mod config;

pub use commands::{cmd_analyze, cmd_estimate, cmd_recover, cmd_simulate, MseCurve};
pub use config::{ExperimentConfig, SweepSpec, Theta0};

use binobs_core::Error as CoreError;

/// Clean run, artifacts written.
pub const EXIT_OK: i32 = 0;
/// Bad invocation, config, or input/output file.
pub const EXIT_USAGE: i32 = 1;
/// Numerical failure, capacity limit, or model mismatch.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A trial aborted mid-run; the id names the seed offset to replay.
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: CoreError },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Trial { source, .. } => core_exit_code(source),
            CliError::Core(source) => core_exit_code(source),
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Capacity { .. }
        | CoreError::IterationLimit { .. }
        | CoreError::DegenerateMass { .. }
        | CoreError::NonFiniteScore { .. }
        | CoreError::ModelMismatch { .. }
        | CoreError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
