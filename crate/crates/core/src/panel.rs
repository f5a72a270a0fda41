//! Panel data model: unit series on a shared integer time axis with a single
//! intervention time `t0`.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("panel has no units")]
    Empty,
    #[error("unit `{unit}` has length {found}, expected {expected}")]
    LengthMismatch {
        unit: String,
        expected: usize,
        found: usize,
    },
    #[error("unit `{unit}` covariate `{name}` has length {found}, expected {expected}")]
    CovariateLength {
        unit: String,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("unit `{unit}` has a missing or non-finite value at index {index}")]
    MissingValue { unit: String, index: usize },
    #[error("duplicate unit id `{0}`")]
    DuplicateUnit(String),
    #[error("t0 = {t0} outside (0, {len})")]
    BadT0 { t0: usize, len: usize },
    #[error("panel has no treated unit")]
    NoTreated,
    #[error("panel has no control unit")]
    NoControl,
    #[error("series too short: need {needed} steps, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("invalid window parameters: {0}")]
    BadWindow(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
}

/// One unit's outcome series plus its treatment flag and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub unit_id: String,
    pub values: Vec<f64>,
    pub treated: bool,
    #[serde(default)]
    pub covariates: BTreeMap<String, Vec<f64>>,
}

impl UnitSeries {
    pub fn new(unit_id: impl Into<String>, treated: bool, values: Vec<f64>) -> Self {
        Self {
            unit_id: unit_id.into(),
            values,
            treated,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.covariates.insert(name.into(), values);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self) -> Result<(), PanelError> {
        if self.values.is_empty() {
            return Err(PanelError::TooShort {
                needed: 1,
                available: 0,
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(PanelError::MissingValue {
                unit: self.unit_id.clone(),
                index,
            });
        }
        for (name, cov) in &self.covariates {
            if cov.len() != self.values.len() {
                return Err(PanelError::CovariateLength {
                    unit: self.unit_id.clone(),
                    name: name.clone(),
                    expected: self.values.len(),
                    found: cov.len(),
                });
            }
            if let Some(index) = cov.iter().position(|v| !v.is_finite()) {
                return Err(PanelError::MissingValue {
                    unit: format!("{}:{}", self.unit_id, name),
                    index,
                });
            }
        }
        Ok(())
    }
}

/// A validated panel. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    units: Vec<UnitSeries>,
    t0: usize,
    horizon: usize,
}

/// Build a panel from unit records, keeping the input order.
pub fn build_panel(records: Vec<UnitSeries>, t0: usize) -> Result<PanelDataset, PanelError> {
    let first = records.first().ok_or(PanelError::Empty)?;
    let len = first.len();
    let mut seen = HashSet::new();
    for unit in &records {
        if unit.len() != len {
            return Err(PanelError::LengthMismatch {
                unit: unit.unit_id.clone(),
                expected: len,
                found: unit.len(),
            });
        }
        unit.validate()?;
        if !seen.insert(unit.unit_id.as_str()) {
            return Err(PanelError::DuplicateUnit(unit.unit_id.clone()));
        }
    }
    if t0 == 0 || t0 >= len {
        return Err(PanelError::BadT0 { t0, len });
    }
    if !records.iter().any(|u| u.treated) {
        return Err(PanelError::NoTreated);
    }
    if records.iter().all(|u| u.treated) {
        return Err(PanelError::NoControl);
    }
    Ok(PanelDataset {
        units: records,
        t0,
        horizon: len - t0,
    })
}

impl PanelDataset {
    pub fn units(&self) -> &[UnitSeries] {
        &self.units
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Shared series length `T`.
    pub fn len(&self) -> usize {
        self.t0 + self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&self, unit_id: &str) -> Result<&UnitSeries, PanelError> {
        self.units
            .iter()
            .find(|u| u.unit_id == unit_id)
            .ok_or_else(|| PanelError::UnknownUnit(unit_id.to_string()))
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.unit_id == unit_id)
    }

    pub fn treated(&self) -> impl Iterator<Item = &UnitSeries> {
        self.units.iter().filter(|u| u.treated)
    }

    pub fn controls(&self) -> impl Iterator<Item = &UnitSeries> {
        self.units.iter().filter(|u| !u.treated)
    }

    pub fn n_treated(&self) -> usize {
        self.treated().count()
    }

    pub fn n_controls(&self) -> usize {
        self.controls().count()
    }

    /// Names of covariates carried by the first unit (all units are expected to agree).
    pub fn covariate_names(&self) -> Vec<String> {
        self.units[0].covariates.keys().cloned().collect()
    }

    /// Same panel with different treatment flags; used for placebo and A/A runs.
    pub fn with_treated(&self, treated_ids: &[String]) -> Result<PanelDataset, PanelError> {
        for id in treated_ids {
            self.unit(id)?;
        }
        let units = self
            .units
            .iter()
            .map(|u| UnitSeries {
                treated: treated_ids.contains(&u.unit_id),
                ..u.clone()
            })
            .collect();
        build_panel(units, self.t0)
    }

    /// Panel without one unit. Fails if that removes the last treated or control unit.
    pub fn without_unit(&self, unit_id: &str) -> Result<PanelDataset, PanelError> {
        self.unit(unit_id)?;
        let units = self
            .units
            .iter()
            .filter(|u| u.unit_id != unit_id)
            .cloned()
            .collect();
        build_panel(units, self.t0)
    }

    pub fn view(&self, range: Range<usize>) -> PanelView<'_> {
        PanelView { panel: self, range }
    }
}

/// Borrowed time slice of a panel.
#[derive(Debug, Clone)]
pub struct PanelView<'a> {
    panel: &'a PanelDataset,
    range: Range<usize>,
}

impl<'a> PanelView<'a> {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn values(&self, unit: usize) -> &'a [f64] {
        &self.panel.units[unit].values[self.range.clone()]
    }

    pub fn unit_values(&self, unit_id: &str) -> Option<&'a [f64]> {
        self.panel
            .unit_index(unit_id)
            .map(|i| &self.panel.units[i].values[self.range.clone()])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a UnitSeries, &'a [f64])> + '_ {
        self.panel
            .units
            .iter()
            .map(move |u| (u, &u.values[self.range.clone()]))
    }
}

/// Pre-intervention view `[0, t0)` and post-intervention view `[t0, T)`.
pub fn split_pre_post(panel: &PanelDataset) -> (PanelView<'_>, PanelView<'_>) {
    (panel.view(0..panel.t0), panel.view(panel.t0..panel.len()))
}

/// Ground truth stored by the simulator for treated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    /// Untreated outcome of every treated unit over the post period.
    pub counterfactuals: BTreeMap<String, Vec<f64>>,
    pub true_att: f64,
}

impl SimulationTruth {
    /// ATT recomputed from the stored counterfactuals against a panel's observations.
    pub fn att_against(&self, panel: &PanelDataset) -> Result<f64, PanelError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (id, cf) in &self.counterfactuals {
            let unit = panel.unit(id)?;
            for (obs, c) in unit.values[panel.t0()..].iter().zip(cf) {
                sum += obs - c;
                count += 1;
            }
        }
        Ok(sum / count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub unit_id: String,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub exogenous: Vec<f64>,
    /// Index of the first target step.
    pub position: usize,
}

/// Number of stride-1 windows with `width` inputs and `horizon` targets ending at or before `limit`.
pub fn window_count(width: usize, horizon: usize, limit: usize) -> usize {
    (limit + 1).saturating_sub(width + horizon)
}

/// All stride-1 windows of `series` whose target ends at or before `limit`.
pub fn sliding_windows(
    series: &UnitSeries,
    width: usize,
    horizon: usize,
    limit: usize,
) -> Result<Vec<Window>, PanelError> {
    if width == 0 || horizon == 0 {
        return Err(PanelError::BadWindow(format!(
            "width {width} and horizon {horizon} must be positive"
        )));
    }
    if limit > series.len() {
        return Err(PanelError::BadWindow(format!(
            "limit {limit} exceeds series length {}",
            series.len()
        )));
    }
    if limit < width + horizon {
        return Err(PanelError::TooShort {
            needed: width + horizon,
            available: limit,
        });
    }
    let windows = (0..window_count(width, horizon, limit))
        .map(|start| {
            let position = start + width;
            Window {
                unit_id: series.unit_id.clone(),
                input: series.values[start..position].to_vec(),
                target: series.values[position..position + horizon].to_vec(),
                exogenous: Vec::new(),
                position,
            }
        })
        .collect();
    Ok(windows)
}

/// Per-phase seasonal profile of period `period`.
///
/// Entry `k` is the mean of the values at positions `≡ k (mod period)`, centred so the
/// profile sums to zero. When every phase is observed equally often this is exactly the
/// per-phase mean after subtracting the global mean.
pub fn seasonal_profile(values: &[f64], period: usize) -> Result<Vec<f64>, PanelError> {
    if period == 0 {
        return Err(PanelError::BadWindow("season length must be positive".into()));
    }
    if values.len() < period {
        return Err(PanelError::TooShort {
            needed: period,
            available: values.len(),
        });
    }
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, v) in values.iter().enumerate() {
        sums[i % period] += v;
        counts[i % period] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let centre = means.iter().sum::<f64>() / period as f64;
    Ok(means.into_iter().map(|m| m - centre).collect())
}

/// Subtract the tiled profile; position `i` of `values` sits at absolute index `offset + i`.
pub fn deseasonalize(values: &[f64], profile: &[f64], offset: usize) -> Vec<f64> {
    let s = profile.len();
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v - profile[(offset + i) % s])
        .collect()
}

/// Inverse of [`deseasonalize`].
pub fn reseasonalize(values: &[f64], profile: &[f64], offset: usize) -> Vec<f64> {
    let s = profile.len();
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v + profile[(offset + i) % s])
        .collect()
}
