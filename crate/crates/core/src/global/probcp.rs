//! Global quantile forecaster over deseasonalised moving windows.
//!
//! Each window is normalised by its input mean. The model reads the window through one
//! tanh recurrent cell and maps `[final hidden state, window, exogenous features, 1]`
//! through an affine head to `horizon × |taus|` quantile outputs. Exogenous features are
//! the seasonal profile at the target steps and the covariates at the last input step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    check_length, deseasonalized_pre, heldout_count, mean, sort_rows, validate_common,
    ForecastError, QuantileForecast, WindowSet,
};
use crate::numerics::{
    crps_from_quantiles, pinball_grad, pinball_unchecked, train_minibatch, validate_taus,
    BatchObjective, Matrix, OptimizerConfig, RidgeSystem,
};
use crate::panel::{PanelDataset, UnitSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbCpConfig {
    /// Season length used for the seasonal profile.
    pub season: usize,
    /// Input window width; `None` means two seasons.
    pub window_w: Option<usize>,
    /// Forecast horizon; `None` means the panel's post-period length.
    pub horizon: Option<usize>,
    pub taus: Vec<f64>,
    /// Recurrent cell size; 0 gives a purely affine model.
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Trailing fraction of each unit's windows used for early stopping.
    pub holdout_fraction: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Most recent windows kept per unit (0 keeps all).
    pub max_windows_per_unit: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ProbCpConfig {
    fn default() -> Self {
        Self {
            season: 7,
            window_w: None,
            horizon: None,
            taus: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            hidden_size: 16,
            epochs: 60,
            batch_size: 64,
            holdout_fraction: 0.1,
            patience: 15,
            max_windows_per_unit: 120,
            optimizer: OptimizerConfig {
                step_size: 1e-3,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl ProbCpConfig {
    pub fn with_season(season: usize) -> Self {
        Self {
            season,
            ..Self::default()
        }
    }

    pub fn window(&self) -> usize {
        self.window_w.unwrap_or(2 * self.season)
    }

    fn median_column(&self) -> Option<usize> {
        self.taus.iter().position(|&t| (t - 0.5).abs() < 1e-12)
    }

    fn validate(&self, panel: &PanelDataset) -> Result<usize, ForecastError> {
        let horizon = self.horizon.unwrap_or(panel.horizon());
        if horizon != panel.horizon() {
            return Err(ForecastError::BadConfig(format!(
                "horizon {horizon} differs from the panel's post period {}",
                panel.horizon()
            )));
        }
        validate_common(self.window(), horizon)?;
        if self.season == 0 || self.window() < self.season {
            return Err(ForecastError::BadConfig(format!(
                "window {} must cover at least one season of {}",
                self.window(),
                self.season
            )));
        }
        validate_taus(&self.taus)?;
        if self.median_column().is_none() {
            return Err(ForecastError::BadConfig("taus must include 0.5".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ForecastError::BadConfig("epochs and batch_size must be positive".into()));
        }
        self.optimizer.validate()?;
        Ok(horizon)
    }
}

/// Parameter layout: `[w_in (H) | w_rec (H×H) | b (H) | head (O × (H + F + 1))]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    width: usize,
    horizon: usize,
    hidden: usize,
    feat: usize,
    n_taus: usize,
}

impl Layout {
    fn outputs(&self) -> usize {
        self.horizon * self.n_taus
    }

    fn head_cols(&self) -> usize {
        self.hidden + self.feat + 1
    }

    fn w_rec(&self) -> usize {
        self.hidden
    }

    fn bias(&self) -> usize {
        self.hidden + self.hidden * self.hidden
    }

    fn head(&self) -> usize {
        self.bias() + self.hidden
    }

    fn n_params(&self) -> usize {
        self.head() + self.outputs() * self.head_cols()
    }
}

/// Scratch buffers for one window.
struct Scratch {
    /// Hidden states `h_{-1}, h_0, ..., h_{W-1}`.
    states: Vec<f64>,
    z: Vec<f64>,
    out: Vec<f64>,
    dout: Vec<f64>,
    dh: Vec<f64>,
    da: Vec<f64>,
}

impl Scratch {
    fn new(l: &Layout) -> Self {
        Self {
            states: vec![0.0; (l.width + 1) * l.hidden],
            z: vec![0.0; l.head_cols()],
            out: vec![0.0; l.outputs()],
            dout: vec![0.0; l.outputs()],
            dh: vec![0.0; l.hidden],
            da: vec![0.0; l.hidden],
        }
    }
}

fn forward(l: &Layout, p: &[f64], scale: f64, x: &[f64], f: &[f64], s: &mut Scratch) {
    let hsz = l.hidden;
    s.states[..hsz].iter_mut().for_each(|v| *v = 0.0);
    for k in 0..l.width {
        let xin = x[k] / scale;
        let (prev, next) = s.states.split_at_mut((k + 1) * hsz);
        let prev = &prev[k * hsz..];
        for i in 0..hsz {
            let row = &p[l.w_rec() + i * hsz..l.w_rec() + (i + 1) * hsz];
            let a = p[i] * xin + p[l.bias() + i] + row.iter().zip(prev).map(|(w, h)| w * h).sum::<f64>();
            next[i] = a.tanh();
        }
    }
    s.z[..hsz].copy_from_slice(&s.states[l.width * hsz..]);
    s.z[hsz..hsz + l.feat].copy_from_slice(f);
    s.z[hsz + l.feat] = 1.0;
    let cols = l.head_cols();
    for o in 0..l.outputs() {
        let row = &p[l.head() + o * cols..l.head() + (o + 1) * cols];
        s.out[o] = row.iter().zip(&s.z).map(|(w, z)| w * z).sum();
    }
}

/// Accumulate the gradient given `s.dout`.
fn backward(l: &Layout, p: &[f64], scale: f64, x: &[f64], s: &mut Scratch, grad: &mut [f64]) {
    let hsz = l.hidden;
    let cols = l.head_cols();
    s.dh.iter_mut().for_each(|v| *v = 0.0);
    for o in 0..l.outputs() {
        let g = s.dout[o];
        if g == 0.0 {
            continue;
        }
        let base = l.head() + o * cols;
        for c in 0..cols {
            grad[base + c] += g * s.z[c];
        }
        for i in 0..hsz {
            s.dh[i] += g * p[base + i];
        }
    }
    if hsz == 0 {
        return;
    }
    for k in (0..l.width).rev() {
        let h_k = &s.states[(k + 1) * hsz..(k + 2) * hsz];
        let h_prev = &s.states[k * hsz..(k + 1) * hsz];
        let xin = x[k] / scale;
        for i in 0..hsz {
            s.da[i] = s.dh[i] * (1.0 - h_k[i] * h_k[i]);
        }
        for i in 0..hsz {
            let da = s.da[i];
            grad[i] += da * xin;
            grad[l.bias() + i] += da;
            let row = l.w_rec() + i * hsz;
            for j in 0..hsz {
                grad[row + j] += da * h_prev[j];
            }
        }
        for j in 0..hsz {
            s.dh[j] = (0..hsz).map(|i| p[l.w_rec() + i * hsz + j] * s.da[i]).sum();
        }
    }
}

/// Mean pinball loss over training windows, outputs and quantile levels.
pub struct ProbCpObjective {
    layout: Layout,
    set: WindowSet,
    items: Vec<usize>,
    taus: Vec<f64>,
    scale: f64,
}

impl ProbCpObjective {
    /// Build the training problem for `panel` (windows, layout, input scale).
    pub fn from_panel(panel: &PanelDataset, cfg: &ProbCpConfig) -> Result<Self, ForecastError> {
        let prepared = Prepared::new(panel, cfg)?;
        let items = prepared.set.train_indices();
        Ok(Self {
            layout: prepared.layout,
            scale: prepared.scale,
            set: prepared.set,
            items,
            taus: cfg.taus.clone(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params()
    }

    /// Loss and gradient over all training windows.
    pub fn full_value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let all: Vec<usize> = (0..self.items.len()).collect();
        self.batch_value_and_grad(params, &all, grad)
    }

    fn outputs(&self, params: &[f64], window: usize, s: &mut Scratch) {
        forward(
            &self.layout,
            params,
            self.scale,
            self.set.input(window),
            self.set.exog_features(window),
            s,
        );
    }

    /// Mean quantile-averaged CRPS over the given windows (rows sorted first).
    fn crps(&self, params: &[f64], windows: &[usize]) -> f64 {
        let l = &self.layout;
        let q = l.n_taus;
        let mut s = Scratch::new(l);
        let mut total = 0.0;
        let mut row = vec![0.0; q];
        for &w in windows {
            self.outputs(params, w, &mut s);
            let target = self.set.target(w);
            for (j, &y) in target.iter().enumerate() {
                row.copy_from_slice(&s.out[j * q..(j + 1) * q]);
                row.sort_by(f64::total_cmp);
                total += crps_from_quantiles(y, &row, &self.taus).unwrap_or(f64::NAN);
            }
        }
        total / (windows.len() * l.horizon) as f64
    }
}

impl BatchObjective for ProbCpObjective {
    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn batch_value_and_grad(&self, params: &[f64], items: &[usize], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let q = l.n_taus;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = Scratch::new(l);
        let norm = 1.0 / (items.len() * l.outputs()) as f64;
        let mut total = 0.0;
        for &item in items {
            let w = self.items[item];
            self.outputs(params, w, &mut s);
            let target = self.set.target(w);
            for j in 0..l.horizon {
                for (k, &tau) in self.taus.iter().enumerate() {
                    let o = j * q + k;
                    total += pinball_unchecked(target[j], s.out[o], tau);
                    s.dout[o] = pinball_grad(target[j], s.out[o], tau) * norm;
                }
            }
            backward(l, params, self.scale, self.set.input(w), &mut s, grad);
        }
        total * norm
    }
}

/// Windows, layout and scale derived from a panel.
struct Prepared {
    layout: Layout,
    set: WindowSet,
    scale: f64,
    covariates: Vec<String>,
}

impl Prepared {
    fn new(panel: &PanelDataset, cfg: &ProbCpConfig) -> Result<Self, ForecastError> {
        let horizon = cfg.validate(panel)?;
        let width = cfg.window();
        check_length(panel, width + horizon)?;
        let covariates = panel.covariate_names();
        let (profiles, series) = deseasonalized_pre(panel, cfg.season)?;
        let exog_dim = horizon + covariates.len();
        let mut set = WindowSet {
            width,
            horizon,
            exog_dim,
            ..WindowSet::default()
        };
        let t0 = panel.t0();
        let count = t0 + 1 - width - horizon;
        let first = if cfg.max_windows_per_unit > 0 {
            count.saturating_sub(cfg.max_windows_per_unit)
        } else {
            0
        };
        let held = heldout_count(count - first, cfg.holdout_fraction);
        for (u, unit) in panel.units().iter().enumerate() {
            for start in first..count {
                let pos = start + width;
                let input = &series[u][start..pos];
                let level = mean(input);
                set.inputs.extend(input.iter().map(|v| v - level));
                set.targets
                    .extend(series[u][pos..pos + horizon].iter().map(|v| v - level));
                set.exog
                    .extend(exogenous_row(unit, &profiles[u], &covariates, pos, horizon));
                set.unit.push(u);
                set.heldout.push(start >= count - held);
            }
        }
        set.build_features();
        let n_inputs = set.inputs.len() as f64;
        let var = set.inputs.iter().map(|v| v * v).sum::<f64>() / n_inputs;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let layout = Layout {
            width,
            horizon,
            hidden: cfg.hidden_size,
            feat: width + exog_dim,
            n_taus: cfg.taus.len(),
        };
        Ok(Self {
            layout,
            set,
            scale,
            covariates,
        })
    }
}

/// Seasonal profile at the `horizon` target steps starting at `pos`, then each covariate
/// at the last input step.
fn exogenous_row(
    unit: &UnitSeries,
    profile: &[f64],
    covariates: &[String],
    pos: usize,
    horizon: usize,
) -> Vec<f64> {
    let s = profile.len();
    let mut row: Vec<f64> = (0..horizon).map(|j| profile[(pos + j) % s]).collect();
    for name in covariates {
        row.push(unit.covariates.get(name).map_or(0.0, |c| c[pos - 1]));
    }
    row
}

fn empirical_quantile(values: &mut [f64], tau: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = tau * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// Affine least-squares warm start for the head plus per-step residual quantile offsets;
/// small random recurrent weights.
fn initial_params(
    prepared: &Prepared,
    taus: &[f64],
    seed: u64,
) -> Result<Vec<f64>, ForecastError> {
    let l = prepared.layout;
    let set = &prepared.set;
    let train = set.train_indices();
    let dim = l.feat + 1;
    let design = Matrix::from_fn(train.len(), dim, |r, c| {
        if c < l.feat {
            set.exog_features(train[r])[c]
        } else {
            1.0
        }
    });
    let mean_diag = (0..dim).map(|c| {
        train.iter().map(|&i| {
            let v = if c < l.feat { set.exog_features(i)[c] } else { 1.0 };
            v * v
        }).sum::<f64>()
    }).sum::<f64>() / dim as f64;
    let system = RidgeSystem::new(&design, 1e-8 * mean_diag.max(1.0))?;

    let mut params = vec![0.0; l.n_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if l.hidden > 0 {
        let w_in = Normal::new(0.0, 0.5).expect("valid normal");
        let w_rec = Normal::new(0.0, 0.5 / (l.hidden as f64).sqrt()).expect("valid normal");
        for i in 0..l.hidden {
            params[i] = w_in.sample(&mut rng);
        }
        for k in 0..l.hidden * l.hidden {
            params[l.w_rec() + k] = w_rec.sample(&mut rng);
        }
    }
    let cols = l.head_cols();
    for j in 0..l.horizon {
        let y: Vec<f64> = train.iter().map(|&i| set.target(i)[j]).collect();
        let beta = system.solve(&design, &y)?;
        let fitted = design.matvec(&beta);
        let mut residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        for (k, &tau) in taus.iter().enumerate() {
            let offset = empirical_quantile(&mut residuals, tau);
            let base = l.head() + (j * l.n_taus + k) * cols;
            params[base + l.hidden..base + l.hidden + l.feat].copy_from_slice(&beta[..l.feat]);
            params[base + cols - 1] = beta[l.feat] + offset;
        }
    }
    Ok(params)
}

/// Fitted global quantile forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbCpModel {
    pub config: ProbCpConfig,
    pub width: usize,
    pub horizon: usize,
    pub covariates: Vec<String>,
    pub input_scale: f64,
    pub params: Vec<f64>,
    /// Held-out CRPS of the returned parameters (training loss when nothing is held out).
    pub validation_score: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl ProbCpModel {
    pub fn fit(panel: &PanelDataset, cfg: &ProbCpConfig) -> Result<Self, ForecastError> {
        let prepared = Prepared::new(panel, cfg)?;
        let init = initial_params(&prepared, &cfg.taus, cfg.optimizer.seed)?;
        let heldout = prepared.set.heldout_indices();
        let objective = ProbCpObjective {
            layout: prepared.layout,
            items: prepared.set.train_indices(),
            set: prepared.set,
            taus: cfg.taus.clone(),
            scale: prepared.scale,
        };
        let mut grad = vec![0.0; init.len()];
        let outcome = train_minibatch(
            &objective,
            &init,
            &cfg.optimizer,
            cfg.batch_size,
            cfg.epochs,
            cfg.patience,
            |p| {
                if heldout.is_empty() {
                    objective.full_value_and_grad(p, &mut grad)
                } else {
                    objective.crps(p, &heldout)
                }
            },
        )
        .map_err(ForecastError::non_finite)?;
        Ok(Self {
            config: cfg.clone(),
            width: prepared.layout.width,
            horizon: prepared.layout.horizon,
            covariates: prepared.covariates,
            input_scale: prepared.scale,
            params: outcome.params,
            validation_score: outcome.score,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            width: self.width,
            horizon: self.horizon,
            hidden: self.config.hidden_size,
            feat: self.width + self.horizon + self.covariates.len(),
            n_taus: self.config.taus.len(),
        }
    }

    /// Counterfactual quantiles for `[t0, t0 + h)` from the last pre-period window.
    pub fn predict_unit(
        &self,
        panel: &PanelDataset,
        unit_id: &str,
    ) -> Result<QuantileForecast, ForecastError> {
        let unit = panel
            .unit(unit_id)
            .map_err(|_| ForecastError::UnknownUnit(unit_id.to_string()))?;
        let layout = self.layout();
        if layout.n_params() != self.params.len() {
            return Err(ForecastError::Incompatible("parameter count".into()));
        }
        if panel.horizon() != self.horizon || panel.covariate_names() != self.covariates {
            return Err(ForecastError::Incompatible(
                "horizon or covariates differ from training".into(),
            ));
        }
        let t0 = panel.t0();
        if t0 < self.width {
            return Err(ForecastError::TooShort {
                unit: unit_id.to_string(),
                needed: self.width,
                available: t0,
            });
        }
        let pre = &unit.values[..t0];
        let profile = crate::panel::seasonal_profile(pre, self.config.season)?;
        let ds = crate::panel::deseasonalize(pre, &profile, 0);
        let input = &ds[t0 - self.width..];
        let level = mean(input);
        let x: Vec<f64> = input.iter().map(|v| v - level).collect();
        let mut features = x.clone();
        features.extend(exogenous_row(unit, &profile, &self.covariates, t0, self.horizon));
        let mut s = Scratch::new(&layout);
        forward(&layout, &self.params, self.input_scale, &x, &features, &mut s);

        let q = layout.n_taus;
        let s_len = profile.len();
        let mut paths = Matrix::from_fn(self.horizon, q, |j, k| {
            s.out[j * q + k] + level + profile[(t0 + j) % s_len]
        });
        sort_rows(&mut paths);
        let median = self.config.median_column().expect("validated at fit");
        let point = (0..self.horizon).map(|j| paths[(j, median)]).collect();
        Ok(QuantileForecast {
            unit_id: unit_id.to_string(),
            taus: self.config.taus.clone(),
            paths,
            point,
        })
    }

    pub fn predict_all(&self, panel: &PanelDataset) -> Result<Vec<QuantileForecast>, ForecastError> {
        panel
            .units()
            .iter()
            .map(|u| self.predict_unit(panel, &u.unit_id))
            .collect()
    }
}
