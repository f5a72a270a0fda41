use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{io_error, write_atomic, IngestError};

/// Description of one simulated scenario, written next to its panel and truth files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub label: String,
    pub seed: u64,
    pub sigma: f64,
    pub t0: usize,
    pub treated: Vec<String>,
    pub true_att: f64,
    pub n_units: usize,
    pub length: usize,
    pub trend: bool,
}

impl ScenarioManifest {
    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
