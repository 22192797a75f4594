//! Config-driven pipeline: preprocess, train, generate, eval, sweep-report,
//! synth. The `tracegen` binary is a thin clap wrapper over these commands;
//! everything here is callable as a library (the acceptance suite and the
//! `full_pipeline` example drive it directly).

mod commands;
mod config;
mod report;

pub use commands::{
    cmd_eval, cmd_generate, cmd_preprocess, cmd_sweep_report, cmd_synth, cmd_train, EvalOptions,
    GenerateOverrides, SweepInput, SynthArgs,
};
pub use config::{DatasetEntry, EvalDefaults, GenerateDefaults, RunConfig};
pub use report::{EvalReport, ProfilePoint, SweepRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error(transparent)]
    Tokenize(#[from] crate::tokenizer::TokenizeError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error(transparent)]
    Generate(#[from] crate::generator::GenError),
    #[error(transparent)]
    Fidelity(#[from] crate::fidelity::FidelityError),
}

impl CliError {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use crate::generator::GenError;
        use crate::model::ModelError;
        match self {
            CliError::Config(_) => 1,
            CliError::Generate(GenError::InvalidSpec(_)) => 1,
            CliError::Model(ModelError::InvalidConfig(_)) => 1,
            CliError::Model(ModelError::Diverged { .. }) => 3,
            CliError::Generate(GenError::AllMasked | GenError::NonFiniteLogit) => 3,
            CliError::Generate(GenError::Model(ModelError::Diverged { .. })) => 3,
            _ => 2,
        }
    }
}
