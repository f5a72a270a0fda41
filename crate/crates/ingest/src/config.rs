use std::path::{Path, PathBuf};

use counterfact_core::global::{MixerConfig, ProbCpConfig};
use counterfact_core::local::{AscmConfig, CarimaConfig};
use serde::{Deserialize, Serialize};

use crate::panel_csv::PanelTable;
use crate::{io_error, IngestError};

/// Intervention time given either as a 0-based index or as a period label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeriodRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfigs {
    pub probcp: ProbCpConfig,
    pub mixer: MixerConfig,
    pub ascm: AscmConfig,
    pub carima: CarimaConfig,
}

/// Everything needed to run a study on one panel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub panel: PathBuf,
    pub t0: PeriodRef,
    pub treated_units: Vec<String>,
    pub season: usize,
    #[serde(default)]
    pub covariates: Vec<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub models: ModelConfigs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl StudyConfig {
    /// Load a config; relative paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let mut cfg: StudyConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.panel);
        cfg.covariates.iter_mut().for_each(resolve);
        if let Some(t) = cfg.truth.as_mut() {
            resolve(t);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Model configurations with the study season and seed applied.
    pub fn resolved_models(&self) -> ModelConfigs {
        let mut m = self.models.clone();
        m.probcp.season = self.season;
        m.probcp.optimizer.seed = self.seed;
        m.mixer.season = self.season;
        m.mixer.optimizer.seed = self.seed;
        m.carima.season = self.season;
        m
    }

    /// Intervention index on the table's axis, after checking treated ids and range.
    pub fn resolve_t0(&self, table: &PanelTable) -> Result<usize, IngestError> {
        if self.season == 0 {
            return Err(IngestError::BadConfig("season must be at least 1".into()));
        }
        if self.treated_units.is_empty() {
            return Err(IngestError::BadConfig("no treated units".into()));
        }
        for id in &self.treated_units {
            if !table.unit_ids().any(|u| u == id) {
                return Err(IngestError::UnknownUnit(id.clone()));
            }
        }
        let t0 = match &self.t0 {
            PeriodRef::Index(i) => *i,
            PeriodRef::Label(label) => table
                .axis
                .index_of(label)
                .ok_or_else(|| IngestError::BadConfig(format!("t0 {label} is before the panel start")))?,
        };
        if t0 == 0 || t0 >= table.len() {
            return Err(IngestError::BadConfig(format!(
                "t0 index {t0} outside 1..{}",
                table.len()
            )));
        }
        Ok(t0)
    }
}
