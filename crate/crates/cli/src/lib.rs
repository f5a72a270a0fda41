//! Batch pipeline behind the `counterfact` binary.

pub mod cli;
pub mod commands;
pub mod pipeline;
pub mod run_manifest;

use thiserror::Error;

pub use pipeline::{fit_model, synthetic_study_models, FitOutput, ModelKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("unknown model `{0}` (expected probcp, mixer, ascm or carima)")]
    UnknownModel(String),
    #[error("{model}: {}{message}", unit.as_ref().map(|u| format!("unit {u}: ")).unwrap_or_default())]
    Fit {
        model: &'static str,
        unit: Option<String>,
        message: String,
    },
    #[error("placebo test not passed (p >= 0.05) for: {}", .0.join(", "))]
    PlaceboFailed(Vec<String>),
    #[error("replayed outputs differ: {}", .0.join(", "))]
    ReplayMismatch(Vec<String>),
    #[error(transparent)]
    Ingest(#[from] counterfact_ingest::IngestError),
    #[error(transparent)]
    Eval(#[from] counterfact_core::eval::EvalError),
    #[error(transparent)]
    Synth(#[from] counterfact_core::synth::SynthError),
    #[error(transparent)]
    Panel(#[from] counterfact_core::panel::PanelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 3 for a failed placebo assertion, 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::PlaceboFailed(_) => 3,
            CliError::Usage(_) | CliError::UnknownModel(_) => 2,
            _ => 1,
        }
    }
}
