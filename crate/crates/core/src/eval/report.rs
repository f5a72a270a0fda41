use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mase, placebo_test, smape, EvalError, TestMethod, WilcoxonResult};
use crate::panel::{PanelDataset, SimulationTruth};

/// Point forecasts of one model over the post period, keyed by unit id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelForecasts {
    pub model: String,
    pub points: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectFragment {
    /// Observed minus forecast for each treated unit.
    pub per_unit_paths: BTreeMap<String, Vec<f64>>,
    pub att_path: Vec<f64>,
    pub att: f64,
}

/// Effect paths of the treated units and their average.
pub fn effect_and_att(
    panel: &PanelDataset,
    forecasts: &BTreeMap<String, Vec<f64>>,
) -> Result<EffectFragment, EvalError> {
    let (t0, h) = (panel.t0(), panel.horizon());
    let mut per_unit_paths = BTreeMap::new();
    let mut att_path = vec![0.0; h];
    for unit in panel.treated() {
        let forecast = forecasts
            .get(&unit.unit_id)
            .ok_or_else(|| EvalError::MissingForecast(unit.unit_id.clone()))?;
        if forecast.len() != h {
            return Err(EvalError::LengthMismatch {
                expected: h,
                found: forecast.len(),
            });
        }
        let path: Vec<f64> = unit.values[t0..].iter().zip(forecast).map(|(y, f)| y - f).collect();
        for (acc, d) in att_path.iter_mut().zip(&path) {
            *acc += d;
        }
        per_unit_paths.insert(unit.unit_id.clone(), path);
    }
    let n = per_unit_paths.len() as f64;
    att_path.iter_mut().for_each(|v| *v /= n);
    let att = att_path.iter().sum::<f64>() / h as f64;
    Ok(EffectFragment {
        per_unit_paths,
        att_path,
        att,
    })
}

/// Mean treated observation over the last `season` pre-intervention steps.
pub fn pre_period_baseline(panel: &PanelDataset, season: usize) -> f64 {
    let t0 = panel.t0();
    let start = t0.saturating_sub(season.max(1));
    let (mut sum, mut count) = (0.0, 0usize);
    for unit in panel.treated() {
        for v in &unit.values[start..t0] {
            sum += v;
            count += 1;
        }
    }
    sum / count as f64
}

/// `att` relative to the mean treated outcome over the last `season` pre-intervention steps.
pub fn relative_att(panel: &PanelDataset, att: f64, season: usize) -> f64 {
    relative_effect(att, pre_period_baseline(panel, season))
}

pub fn relative_effect(att: f64, baseline: f64) -> f64 {
    att / baseline
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub att: f64,
    pub att_path: Vec<f64>,
    pub relative_att: f64,
    /// Mean per-unit sMAPE over control units.
    pub smape: f64,
    /// Mean per-unit MASE over control units.
    pub mase: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub placebo: WilcoxonResult,
    /// Forecast sMAPE against the true treated counterfactuals, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_smape: Option<f64>,
    pub per_unit_paths: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub t0: usize,
    pub horizon: usize,
    pub season: usize,
    pub baseline_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_att: Option<f64>,
    pub models: Vec<ModelReport>,
}

fn per_unit_mase(panel: &PanelDataset, unit_id: &str, forecast: &[f64], season: usize) -> Result<f64, EvalError> {
    let unit = panel.unit(unit_id)?;
    let t0 = panel.t0();
    mase(&unit.values[t0..], forecast, &unit.values[..t0], season)
}

fn forecast_for<'a>(fc: &'a ModelForecasts, unit_id: &str, h: usize) -> Result<&'a [f64], EvalError> {
    let path = fc
        .points
        .get(unit_id)
        .ok_or_else(|| EvalError::MissingForecast(unit_id.to_string()))?;
    if path.len() != h {
        return Err(EvalError::LengthMismatch {
            expected: h,
            found: path.len(),
        });
    }
    Ok(path)
}

fn model_report(
    panel: &PanelDataset,
    fc: &ModelForecasts,
    truth: Option<&SimulationTruth>,
    season: usize,
) -> Result<ModelReport, EvalError> {
    let (t0, h) = (panel.t0(), panel.horizon());
    let effect = effect_and_att(panel, &fc.points)?;

    let mut control_smape = Vec::new();
    let mut control_mase = Vec::new();
    for unit in panel.controls() {
        let path = forecast_for(fc, &unit.unit_id, h)?;
        control_smape.push(smape(&unit.values[t0..], path)?);
        control_mase.push(per_unit_mase(panel, &unit.unit_id, path, season)?);
    }
    let mut treated_mase = Vec::new();
    for unit in panel.treated() {
        let path = forecast_for(fc, &unit.unit_id, h)?;
        treated_mase.push(per_unit_mase(panel, &unit.unit_id, path, season)?);
    }
    let placebo = placebo_test(&control_mase, &treated_mase)?;

    let counterfactual_smape = match truth {
        Some(truth) => {
            let mut scores = Vec::new();
            for unit in panel.treated() {
                let actual = truth
                    .counterfactuals
                    .get(&unit.unit_id)
                    .ok_or_else(|| EvalError::MissingForecast(unit.unit_id.clone()))?;
                scores.push(smape(actual, forecast_for(fc, &unit.unit_id, h)?)?);
            }
            Some(mean(&scores))
        }
        None => None,
    };

    Ok(ModelReport {
        model: fc.model.clone(),
        att: effect.att,
        att_path: effect.att_path,
        relative_att: relative_att(panel, effect.att, season),
        smape: mean(&control_smape),
        mase: mean(&control_mase),
        p_value: placebo.p_value,
        method: placebo.method,
        placebo,
        counterfactual_smape,
        per_unit_paths: effect.per_unit_paths,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Effects, control-unit errors and placebo result for each model.
///
/// Forecasts must cover every unit, controls included: control errors feed both the
/// metric tables and the placebo test.
pub fn build_report(
    panel: &PanelDataset,
    forecasts: &[ModelForecasts],
    truth: Option<&SimulationTruth>,
    season: usize,
) -> Result<EffectReport, EvalError> {
    if forecasts.is_empty() {
        return Err(EvalError::NoModels);
    }
    let models = forecasts
        .iter()
        .map(|fc| model_report(panel, fc, truth, season))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EffectReport {
        t0: panel.t0(),
        horizon: panel.horizon(),
        season,
        baseline_mean: pre_period_baseline(panel, season),
        true_att: truth.map(|t| t.true_att),
        models,
    })
}

impl EffectReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per model.
    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("model,att,relative_att,smape,mase,p_value,method,u_statistic,counterfactual_smape\n");
        for m in &self.models {
            let method = match m.method {
                TestMethod::Exact => "exact",
                TestMethod::NormalApproximation => "normal-approximation",
            };
            let cf = m.counterfactual_smape.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                m.model, m.att, m.relative_att, m.smape, m.mase, m.p_value, method, m.placebo.u_statistic, cf
            );
        }
        out
    }

    /// Long format: one row per model, unit and post step; unit `ATT` holds the average path.
    pub fn effects_csv(&self) -> String {
        let mut out = String::from("model,unit_id,step,effect\n");
        for m in &self.models {
            for (step, v) in m.att_path.iter().enumerate() {
                let _ = writeln!(out, "{},ATT,{},{}", m.model, self.t0 + step, v);
            }
            for (id, path) in &m.per_unit_paths {
                for (step, v) in path.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", m.model, id, self.t0 + step, v);
                }
            }
        }
        out
    }
}
