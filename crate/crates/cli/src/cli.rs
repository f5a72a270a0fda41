use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::pipeline::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "counterfact", version, about = "Counterfactual forecasting for panels with a single intervention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel with an injected intervention (panel.csv, truth.csv, manifest.json).
    Simulate(SimulateArgs),
    /// Fit one model and forecast the post period of every unit.
    Fit(FitArgs),
    /// Compute effects, control-unit errors and the placebo test from forecast files.
    Evaluate(EvaluateArgs),
    /// Fit every model named in a study config and evaluate them.
    Run(RunArgs),
    /// Download a public price series into a panel CSV.
    Fetch(FetchArgs),
    /// Re-run the command recorded in a run manifest and check its outputs are unchanged.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of units.
    #[arg(long, default_value_t = 50)]
    pub units: usize,
    /// Series length.
    #[arg(long, default_value_t = 90)]
    pub length: usize,
    /// Apply the multiplicative trend.
    #[arg(long)]
    pub trend: bool,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit all eight grid scenarios, one directory each (ignores --units, --length, --trend).
    #[arg(long)]
    pub grid: bool,
    /// Select treated units but leave their outcomes untouched (A/A panel).
    #[arg(long)]
    pub null: bool,
    /// Output directory.
    #[arg(long, default_value = "sim")]
    pub out: PathBuf,
}

/// Where the treated set and intervention time come from.
#[derive(Debug, Args, Clone)]
pub struct StudySource {
    /// Panel CSV (`unit_id,period,value`).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Study config JSON; its panel path is used unless --panel is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario manifest JSON (defaults to manifest.json next to the panel when no config is given).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Model to fit.
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[command(flatten)]
    pub source: StudySource,
    /// Output directory for forecasts and model JSON.
    #[arg(long, default_value = "fit")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: StudySource,
    /// Forecast CSVs, as `name=path` or `path` (name taken from a `forecasts_<name>.csv` file name).
    #[arg(long, num_args = 1.., required = true)]
    pub forecasts: Vec<String>,
    /// Truth CSV with the untreated outcomes of treated units.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory for report.json, report.csv, effects.csv and plots/.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Exit with status 3 when any model's placebo p-value is at least 0.05.
    #[arg(long)]
    pub assert_placebo: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Study config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Models to run (default: all four).
    #[arg(long, value_enum, num_args = 1..)]
    pub models: Vec<ModelKind>,
    /// Exit with status 3 when any model's placebo p-value is at least 0.05.
    #[arg(long)]
    pub assert_placebo: bool,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// API endpoint URL.
    #[arg(long)]
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "EIA_API_KEY")]
    pub api_key_env: String,
    /// JSON series spec (field names and extra query parameters).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output panel CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run manifest written by an earlier command.
    pub manifest: PathBuf,
}
