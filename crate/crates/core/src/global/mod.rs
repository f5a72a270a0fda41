//! Globally trained counterfactual forecasters: one parameter set shared by every
//! unit, trained on pre-intervention moving windows of treated and control units alike.

mod mixer;
mod probcp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, NumericsError};
use crate::panel::{deseasonalize, seasonal_profile, PanelDataset, PanelError};

pub use mixer::{Activation, MixerConfig, MixerModel, MixerObjective};
pub use probcp::{ProbCpConfig, ProbCpModel, ProbCpObjective};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("unit `{unit}` is too short: need {needed} pre-period steps, have {available}")]
    TooShort {
        unit: String,
        needed: usize,
        available: usize,
    },
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("model does not match panel: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

impl ForecastError {
    pub(crate) fn non_finite(err: NumericsError) -> Self {
        ForecastError::Numerics(err)
    }
}

/// Quantile paths of one unit's counterfactual over the post period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub unit_id: String,
    pub taus: Vec<f64>,
    /// `h × |taus|`, non-decreasing along each row.
    pub paths: Matrix,
    pub point: Vec<f64>,
}

/// A point counterfactual path, optionally with quantile paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualForecast {
    pub unit_id: String,
    pub point: Vec<f64>,
    pub quantiles: Option<QuantileForecast>,
}

impl From<QuantileForecast> for CounterfactualForecast {
    fn from(q: QuantileForecast) -> Self {
        CounterfactualForecast {
            unit_id: q.unit_id.clone(),
            point: q.point.clone(),
            quantiles: Some(q),
        }
    }
}

/// Training/held-out windows in a flat layout shared by both global models.
#[derive(Debug, Clone, Default)]
pub(crate) struct WindowSet {
    pub width: usize,
    pub horizon: usize,
    /// Per-window input rows (`width` each), already level-normalised.
    pub inputs: Vec<f64>,
    /// Per-window exogenous rows.
    pub exog: Vec<f64>,
    pub exog_dim: usize,
    /// Per-window target rows (`horizon` each), normalised like the inputs.
    pub targets: Vec<f64>,
    pub unit: Vec<usize>,
    pub heldout: Vec<bool>,
    /// Per-window `[input, exog]` rows, filled by `build_features`.
    pub features: Vec<f64>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn exog(&self, i: usize) -> &[f64] {
        &self.exog[i * self.exog_dim..(i + 1) * self.exog_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.heldout[i]).collect()
    }

    pub fn heldout_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.heldout[i]).collect()
    }

    pub fn feat_dim(&self) -> usize {
        self.width + self.exog_dim
    }

    pub fn exog_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feat_dim()..(i + 1) * self.feat_dim()]
    }

    pub fn build_features(&mut self) {
        let n = self.len();
        let mut features = Vec::with_capacity(n * self.feat_dim());
        for i in 0..n {
            features.extend_from_slice(self.input(i));
            features.extend_from_slice(self.exog(i));
        }
        self.features = features;
    }
}

/// Number of trailing windows per unit kept for validation.
pub(crate) fn heldout_count(count: usize, fraction: f64) -> usize {
    if count < 2 || fraction <= 0.0 {
        return 0;
    }
    ((count as f64 * fraction).ceil() as usize).min(count - 1)
}

/// Check every unit has `needed` pre-period steps.
pub(crate) fn check_length(panel: &PanelDataset, needed: usize) -> Result<(), ForecastError> {
    if panel.t0() < needed {
        let unit = panel.units()[0].unit_id.clone();
        return Err(ForecastError::TooShort {
            unit,
            needed,
            available: panel.t0(),
        });
    }
    Ok(())
}

/// Per-unit seasonal profiles (estimated on the pre-period) and deseasonalised pre-period series.
pub(crate) fn deseasonalized_pre(
    panel: &PanelDataset,
    season: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ForecastError> {
    let mut profiles = Vec::with_capacity(panel.n_units());
    let mut series = Vec::with_capacity(panel.n_units());
    for unit in panel.units() {
        let pre = &unit.values[..panel.t0()];
        let profile = seasonal_profile(pre, season)?;
        series.push(deseasonalize(pre, &profile, 0));
        profiles.push(profile);
    }
    Ok((profiles, series))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sort each row of a quantile matrix in place.
pub(crate) fn sort_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        m.row_mut(i).sort_by(f64::total_cmp);
    }
}

pub(crate) fn validate_common(window: usize, horizon: usize) -> Result<(), ForecastError> {
    if window == 0 || horizon == 0 {
        return Err(ForecastError::BadConfig(format!(
            "window {window} and horizon {horizon} must be positive"
        )));
    }
    Ok(())
}
