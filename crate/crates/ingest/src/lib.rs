//! File formats for counterfactual studies: panel, covariate and truth CSVs, scenario
//! manifests, study configuration, and an optional fetch of public price data.

mod config;
mod covariates;
mod fetch;
mod manifest;
mod panel_csv;
mod period;
mod truth;

use std::path::{Path, PathBuf};

use counterfact_core::panel::PanelError;
use thiserror::Error;

pub use config::{ModelConfigs, PeriodRef, StudyConfig};
pub use covariates::{join_covariates, parse_covariates_csv, read_covariates_csv, write_covariates_csv, CovariateTable, Joined};
pub use fetch::{fetch_public_prices, parse_price_response, SeriesSpec};
pub use manifest::ScenarioManifest;
pub use panel_csv::{parse_panel_csv, read_panel_csv, write_panel_csv, PanelTable};
pub use period::{Granularity, PeriodAxis};
pub use truth::{parse_truth_csv, read_truth_csv, write_truth_csv};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: duplicate key ({unit}, {period})")]
    DuplicateKey { row: u64, unit: String, period: String },
    #[error("unit {unit}: no row for period {period}")]
    GapInPeriods { unit: String, period: String },
    #[error("row {row}: cannot parse {column} value `{value}`")]
    UnparseableValue { row: u64, column: String, value: String },
    #[error("covariate {name}: no value for unit {unit} at period {period}")]
    CoverageGap { name: String, unit: String, period: String },
    #[error("unit {0} is not in the panel")]
    UnknownUnit(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("http request failed: {0}")]
    HttpError(String),
    #[error("request rejected ({status}); check the API key in ${env_var}")]
    AuthError { env_var: String, status: String },
    #[error("unexpected response shape at byte {offset}: {message}")]
    SchemaDrift { offset: usize, message: String },
    #[error(transparent)]
    Panel(#[from] PanelError),
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `contents` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(io_error(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_error(path))
}
