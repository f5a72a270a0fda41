//! Effect estimates, forecast error metrics and the placebo test.

mod metrics;
mod report;
mod svg;
mod wilcoxon;

use thiserror::Error;

use crate::panel::PanelError;

pub use metrics::{mase, smape};
pub use report::{
    build_report, effect_and_att, pre_period_baseline, relative_att, relative_effect, EffectFragment, EffectReport, ModelForecasts,
    ModelReport,
};
pub use svg::effect_chart;
pub use wilcoxon::{placebo_test, rank_sum_test, TestMethod, WilcoxonResult, EXACT_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("metric input is empty")]
    Empty,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("in-sample series too short for seasonal lag: need {needed}, have {available}")]
    TooShortInsample { needed: usize, available: usize },
    #[error("no forecast for unit {0}")]
    MissingForecast(String),
    #[error("placebo test needs non-empty control and treated groups")]
    EmptyGroup,
    #[error("non-finite value in test input")]
    NonFinite,
    #[error("report needs at least one model")]
    NoModels,
    #[error(transparent)]
    Panel(#[from] PanelError),
}
