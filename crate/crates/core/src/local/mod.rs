//! Per-unit counterfactual estimators: simplex synthetic control, its ridge-augmented
//! variant, and ARIMA forecasts of the pre-period.

mod arima;
mod ascm;
mod sc;

use thiserror::Error;

use crate::numerics::{Matrix, NumericsError};
use crate::panel::{PanelDataset, PanelError};

pub use arima::{
    arima_counterfactual, css_objective, difference, fit_arima_order, fit_carima, forecast_arima,
    integrate, is_stationary, ArimaGrid, ArimaModel, ArimaOrder, CarimaConfig,
};
pub use ascm::{ascm_counterfactual, default_lambda_grid, fit_ascm, fit_ascm_with, AscmConfig, AugmentedModel};
pub use sc::{fit_sc, fit_sc_with, sc_counterfactual, ScConfig, ScWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalError {
    #[error("need at least 2 donors, found {0}")]
    TooFewDonors(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("series too short: need {needed}, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("no candidate ARIMA order produced a stationary, invertible fit")]
    NoValidModel,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Donor matrices for one target unit: every control except the target itself.
pub(crate) struct DonorPool {
    pub ids: Vec<String>,
    /// `t0 × J`
    pub pre: Matrix,
    /// `h × J`
    pub post: Matrix,
}

impl DonorPool {
    pub fn for_unit(panel: &PanelDataset, unit_id: &str) -> Result<Self, LocalError> {
        panel.unit(unit_id)?;
        let donors: Vec<_> = panel.controls().filter(|u| u.unit_id != unit_id).collect();
        if donors.len() < 2 {
            return Err(LocalError::TooFewDonors(donors.len()));
        }
        let t0 = panel.t0();
        let pre = Matrix::from_fn(t0, donors.len(), |t, j| donors[j].values[t]);
        let post = Matrix::from_fn(panel.horizon(), donors.len(), |t, j| donors[j].values[t0 + t]);
        Ok(Self {
            ids: donors.iter().map(|u| u.unit_id.clone()).collect(),
            pre,
            post,
        })
    }
}
