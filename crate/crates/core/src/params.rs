//! Serialized parameters of a fitted estimator.

use serde::{Deserialize, Serialize};

use crate::global::{MixerModel, ProbCpModel};
use crate::local::{ArimaModel, AugmentedModel};

/// A fitted model as written to disk. Global models cover the whole panel; local
/// models are fitted per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Probcp(ProbCpModel),
    Mixer(MixerModel),
    Ascm { unit_id: String, fit: AugmentedModel },
    Carima { unit_id: String, fit: ArimaModel, season: usize },
}

impl ModelParams {
    pub fn name(&self) -> &'static str {
        match self {
            ModelParams::Probcp(_) => "probcp",
            ModelParams::Mixer(_) => "mixer",
            ModelParams::Ascm { .. } => "ascm",
            ModelParams::Carima { .. } => "carima",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model parameters serialize")
    }
}
