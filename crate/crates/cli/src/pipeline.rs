use std::collections::BTreeMap;

use counterfact_core::eval::ModelForecasts;
use counterfact_core::global::{MixerModel, ProbCpModel, QuantileForecast};
use counterfact_core::local::{arima_counterfactual, ascm_counterfactual, LocalError};
use counterfact_core::panel::PanelDataset;
use counterfact_core::params::ModelParams;
use counterfact_ingest::ModelConfigs;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Probcp,
    Mixer,
    Ascm,
    Carima,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Probcp, ModelKind::Mixer, ModelKind::Ascm, ModelKind::Carima];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Probcp => "probcp",
            ModelKind::Mixer => "mixer",
            ModelKind::Ascm => "ascm",
            ModelKind::Carima => "carima",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| CliError::UnknownModel(name.to_string()))
    }
}

/// Forecasts for every unit of a panel, plus the fitted parameters to persist.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub kind: ModelKind,
    pub forecasts: ModelForecasts,
    pub quantiles: Option<(Vec<f64>, BTreeMap<String, QuantileForecast>)>,
    /// One entry for global models; one per treated unit for local models.
    pub params: Vec<ModelParams>,
}

/// Model settings used for simulated panels: a 7-step season and, for the global models,
/// a 28-step input window that spans the slowest simulated cycle.
pub fn synthetic_study_models(seed: u64) -> ModelConfigs {
    let mut m = ModelConfigs::default();
    m.probcp.season = 7;
    m.probcp.window_w = Some(28);
    m.probcp.optimizer.seed = seed;
    m.mixer.season = 7;
    m.mixer.window_w = Some(28);
    m.mixer.optimizer.seed = seed;
    m.carima.season = 7;
    m
}

fn local_error(kind: ModelKind, unit: &str, err: LocalError) -> CliError {
    CliError::Fit {
        model: kind.name(),
        unit: Some(unit.to_string()),
        message: err.to_string(),
    }
}

/// Fit `kind` and forecast the post period of every unit, controls included.
pub fn fit_model(panel: &PanelDataset, kind: ModelKind, cfg: &ModelConfigs) -> Result<FitOutput, CliError> {
    let global_error = |e: counterfact_core::global::ForecastError| CliError::Fit {
        model: kind.name(),
        unit: None,
        message: e.to_string(),
    };
    let mut points = BTreeMap::new();
    let mut params = Vec::new();
    let mut quantiles = None;
    match kind {
        ModelKind::Probcp => {
            let model = ProbCpModel::fit(panel, &cfg.probcp).map_err(global_error)?;
            let mut paths = BTreeMap::new();
            for q in model.predict_all(panel).map_err(global_error)? {
                points.insert(q.unit_id.clone(), q.point.clone());
                paths.insert(q.unit_id.clone(), q);
            }
            quantiles = Some((model.config.taus.clone(), paths));
            params.push(ModelParams::Probcp(model));
        }
        ModelKind::Mixer => {
            let model = MixerModel::fit(panel, &cfg.mixer).map_err(global_error)?;
            for unit in panel.units() {
                points.insert(unit.unit_id.clone(), model.predict_unit(panel, &unit.unit_id).map_err(global_error)?);
            }
            params.push(ModelParams::Mixer(model));
        }
        ModelKind::Ascm => {
            for unit in panel.units() {
                let fit = ascm_counterfactual(panel, &unit.unit_id, &cfg.ascm)
                    .map_err(|e| local_error(kind, &unit.unit_id, e))?;
                points.insert(unit.unit_id.clone(), fit.prediction.clone());
                if unit.treated {
                    params.push(ModelParams::Ascm {
                        unit_id: unit.unit_id.clone(),
                        fit,
                    });
                }
            }
        }
        ModelKind::Carima => {
            for unit in panel.units() {
                let (fit, path) = arima_counterfactual(panel, &unit.unit_id, &cfg.carima)
                    .map_err(|e| local_error(kind, &unit.unit_id, e))?;
                points.insert(unit.unit_id.clone(), path);
                if unit.treated {
                    params.push(ModelParams::Carima {
                        unit_id: unit.unit_id.clone(),
                        fit,
                        season: cfg.carima.season,
                    });
                }
            }
        }
    }
    Ok(FitOutput {
        kind,
        forecasts: ModelForecasts {
            model: kind.name().to_string(),
            points,
        },
        quantiles,
        params,
    })
}
