//! Global point forecaster built from residual time-mixing and feature-mixing blocks.
//!
//! Input is a `W × C` window: the target (minus its window mean) in channel 0 followed
//! by the covariates. Each block adds `act(A · norm(x) + a)` across time, then a two
//! layer per-step channel MLP over `norm(x)`. `norm` standardises every channel over the
//! window. An affine head maps the target channel to the `h` step forecast.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_length, heldout_count, mean, validate_common, ForecastError, WindowSet};
use crate::numerics::{train_minibatch, BatchObjective, Matrix, OptimizerConfig, RidgeSystem};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixerConfig {
    /// Only used for the default window of four seasons.
    pub season: usize,
    pub window_w: Option<usize>,
    pub horizon: Option<usize>,
    pub n_blocks: usize,
    /// Feature-mixing hidden width as a multiple of the channel count.
    pub hidden_mult: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub patience: usize,
    /// Most recent windows kept per unit (0 keeps all).
    pub max_windows_per_unit: usize,
    pub norm_eps: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            season: 7,
            window_w: None,
            horizon: None,
            n_blocks: 2,
            hidden_mult: 2,
            activation: Activation::Relu,
            epochs: 60,
            batch_size: 64,
            holdout_fraction: 0.1,
            patience: 15,
            max_windows_per_unit: 0,
            norm_eps: 1e-5,
            optimizer: OptimizerConfig {
                step_size: 1e-3,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl MixerConfig {
    pub fn with_season(season: usize) -> Self {
        Self {
            season,
            ..Self::default()
        }
    }

    pub fn window(&self) -> usize {
        self.window_w.unwrap_or(4 * self.season)
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
        if self.n_blocks == 0 || self.hidden_mult == 0 {
            return Err(ForecastError::BadConfig("n_blocks and hidden_mult must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ForecastError::BadConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(ForecastError::BadConfig("norm_eps must be positive".into()));
        }
        self.optimizer.validate()?;
        Ok(horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    width: usize,
    channels: usize,
    ff: usize,
    blocks: usize,
    horizon: usize,
}

/// Offsets of one block's parameters.
struct BlockAt {
    a_mat: usize,
    a_bias: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Layout {
    fn block_len(&self) -> usize {
        let (w, c, f) = (self.width, self.channels, self.ff);
        w * w + w + f * c + f + c * f + c
    }

    fn block(&self, b: usize) -> BlockAt {
        let (w, c, f) = (self.width, self.channels, self.ff);
        let a_mat = b * self.block_len();
        let a_bias = a_mat + w * w;
        let w1 = a_bias + w;
        let b1 = w1 + f * c;
        let w2 = b1 + f;
        let b2 = w2 + c * f;
        BlockAt {
            a_mat,
            a_bias,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn head(&self) -> usize {
        self.blocks * self.block_len()
    }

    fn head_bias(&self) -> usize {
        self.head() + self.horizon * self.width
    }

    fn n_params(&self) -> usize {
        self.head_bias() + self.horizon
    }

    fn cells(&self) -> usize {
        self.width * self.channels
    }
}

/// Per-block activations kept for the backward pass. Matrices are `W × C` (or `W × F`)
/// row-major.
#[derive(Clone)]
struct BlockCache {
    z: Vec<f64>,
    s: Vec<f64>,
    u: Vec<f64>,
    z2: Vec<f64>,
    s2: Vec<f64>,
    v: Vec<f64>,
}

struct Scratch {
    x: Vec<f64>,
    blocks: Vec<BlockCache>,
    out: Vec<f64>,
    dx: Vec<f64>,
    dz: Vec<f64>,
    dg: Vec<f64>,
}

impl Scratch {
    fn new(l: &Layout) -> Self {
        let cells = l.cells();
        let hidden = l.width * l.ff;
        let cache = BlockCache {
            z: vec![0.0; cells],
            s: vec![0.0; l.channels],
            u: vec![0.0; cells],
            z2: vec![0.0; cells],
            s2: vec![0.0; l.channels],
            v: vec![0.0; hidden],
        };
        Self {
            x: vec![0.0; cells],
            blocks: vec![cache; l.blocks],
            out: vec![0.0; l.horizon],
            dx: vec![0.0; cells],
            dz: vec![0.0; cells],
            dg: vec![0.0; hidden],
        }
    }
}

/// Standardise each channel over time.
fn norm_forward(x: &[f64], w: usize, c: usize, eps: f64, z: &mut [f64], s: &mut [f64]) {
    for ch in 0..c {
        let mu = (0..w).map(|t| x[t * c + ch]).sum::<f64>() / w as f64;
        let var = (0..w).map(|t| (x[t * c + ch] - mu).powi(2)).sum::<f64>() / w as f64;
        let sd = (var + eps).sqrt();
        s[ch] = sd;
        for t in 0..w {
            z[t * c + ch] = (x[t * c + ch] - mu) / sd;
        }
    }
}

/// Add the input gradient of `norm_forward` to `dx`.
fn norm_backward(dz: &[f64], z: &[f64], s: &[f64], w: usize, c: usize, dx: &mut [f64]) {
    for ch in 0..c {
        let m1 = (0..w).map(|t| dz[t * c + ch]).sum::<f64>() / w as f64;
        let m2 = (0..w).map(|t| dz[t * c + ch] * z[t * c + ch]).sum::<f64>() / w as f64;
        for t in 0..w {
            let i = t * c + ch;
            dx[i] += (dz[i] - m1 - z[i] * m2) / s[ch];
        }
    }
}

fn forward(l: &Layout, p: &[f64], act: Activation, eps: f64, input: &[f64], s: &mut Scratch) {
    let (w, c, f) = (l.width, l.channels, l.ff);
    s.x.copy_from_slice(input);
    for b in 0..l.blocks {
        let at = l.block(b);
        let cache = &mut s.blocks[b];
        norm_forward(&s.x, w, c, eps, &mut cache.z, &mut cache.s);
        for t in 0..w {
            let row = &p[at.a_mat + t * w..at.a_mat + (t + 1) * w];
            for ch in 0..c {
                let mut u = p[at.a_bias + t];
                for (tp, a) in row.iter().enumerate() {
                    u += a * cache.z[tp * c + ch];
                }
                cache.u[t * c + ch] = u;
                s.x[t * c + ch] += act.apply(u);
            }
        }
        norm_forward(&s.x, w, c, eps, &mut cache.z2, &mut cache.s2);
        for t in 0..w {
            let z2 = &cache.z2[t * c..(t + 1) * c];
            for k in 0..f {
                let row = &p[at.w1 + k * c..at.w1 + (k + 1) * c];
                let v = p[at.b1 + k] + row.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>();
                cache.v[t * f + k] = v;
            }
            for ch in 0..c {
                let row = &p[at.w2 + ch * f..at.w2 + (ch + 1) * f];
                let mut add = p[at.b2 + ch];
                for k in 0..f {
                    add += row[k] * act.apply(cache.v[t * f + k]);
                }
                s.x[t * c + ch] += add;
            }
        }
    }
    for j in 0..l.horizon {
        let row = &p[l.head() + j * w..l.head() + (j + 1) * w];
        s.out[j] = p[l.head_bias() + j] + (0..w).map(|t| row[t] * s.x[t * c]).sum::<f64>();
    }
}

/// Accumulate the gradient for output gradient `dout` (run right after `forward`).
fn backward(l: &Layout, p: &[f64], act: Activation, dout: &[f64], s: &mut Scratch, grad: &mut [f64]) {
    let (w, c, f) = (l.width, l.channels, l.ff);
    s.dx.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..l.horizon {
        let g = dout[j];
        grad[l.head_bias() + j] += g;
        for t in 0..w {
            grad[l.head() + j * w + t] += g * s.x[t * c];
            s.dx[t * c] += g * p[l.head() + j * w + t];
        }
    }
    for b in (0..l.blocks).rev() {
        let at = l.block(b);
        let cache = &s.blocks[b];
        // feature mix
        s.dz.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..w {
            for ch in 0..c {
                grad[at.b2 + ch] += s.dx[t * c + ch];
            }
            for k in 0..f {
                let v = cache.v[t * f + k];
                let g = act.apply(v);
                let mut dg = 0.0;
                for ch in 0..c {
                    let d = s.dx[t * c + ch];
                    grad[at.w2 + ch * f + k] += d * g;
                    dg += p[at.w2 + ch * f + k] * d;
                }
                s.dg[t * f + k] = dg * act.derivative(v);
            }
            for k in 0..f {
                let dv = s.dg[t * f + k];
                if dv == 0.0 {
                    continue;
                }
                grad[at.b1 + k] += dv;
                for ch in 0..c {
                    grad[at.w1 + k * c + ch] += dv * cache.z2[t * c + ch];
                    s.dz[t * c + ch] += p[at.w1 + k * c + ch] * dv;
                }
            }
        }
        norm_backward(&s.dz, &cache.z2, &cache.s2, w, c, &mut s.dx);
        // time mix; dx now holds the gradient at the block input plus the residual path
        s.dz.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..w {
            for ch in 0..c {
                let du = s.dx[t * c + ch] * act.derivative(cache.u[t * c + ch]);
                if du == 0.0 {
                    continue;
                }
                grad[at.a_bias + t] += du;
                for tp in 0..w {
                    grad[at.a_mat + t * w + tp] += du * cache.z[tp * c + ch];
                    s.dz[tp * c + ch] += p[at.a_mat + t * w + tp] * du;
                }
            }
        }
        norm_backward(&s.dz, &cache.z, &cache.s, w, c, &mut s.dx);
    }
}

/// Mean squared error over training windows and horizon steps, in scaled units.
pub struct MixerObjective {
    layout: Layout,
    set: WindowSet,
    items: Vec<usize>,
    activation: Activation,
    eps: f64,
}

impl MixerObjective {
    pub fn from_panel(panel: &PanelDataset, cfg: &MixerConfig) -> Result<Self, ForecastError> {
        let prepared = Prepared::new(panel, cfg)?;
        Ok(prepared.into_objective(cfg))
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params()
    }

    pub fn full_value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let all: Vec<usize> = (0..self.items.len()).collect();
        self.batch_value_and_grad(params, &all, grad)
    }

    fn mse(&self, params: &[f64], windows: &[usize]) -> f64 {
        let mut s = Scratch::new(&self.layout);
        let mut total = 0.0;
        for &w in windows {
            forward(&self.layout, params, self.activation, self.eps, self.set.exog_features(w), &mut s);
            total += s
                .out
                .iter()
                .zip(self.set.target(w))
                .map(|(o, y)| (o - y).powi(2))
                .sum::<f64>();
        }
        total / (windows.len() * self.layout.horizon) as f64
    }
}

impl BatchObjective for MixerObjective {
    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn batch_value_and_grad(&self, params: &[f64], items: &[usize], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = Scratch::new(l);
        let mut dout = vec![0.0; l.horizon];
        let norm = 1.0 / (items.len() * l.horizon) as f64;
        let mut total = 0.0;
        for &item in items {
            let w = self.items[item];
            forward(l, params, self.activation, self.eps, self.set.exog_features(w), &mut s);
            for (j, y) in self.set.target(w).iter().enumerate() {
                let r = s.out[j] - y;
                total += r * r;
                dout[j] = 2.0 * r * norm;
            }
            backward(l, params, self.activation, &dout, &mut s, grad);
        }
        total * norm
    }
}

struct Prepared {
    layout: Layout,
    set: WindowSet,
    scale: f64,
    covariates: Vec<String>,
}

impl Prepared {
    fn new(panel: &PanelDataset, cfg: &MixerConfig) -> Result<Self, ForecastError> {
        let horizon = cfg.validate(panel)?;
        let width = cfg.window();
        check_length(panel, width + horizon)?;
        let covariates = panel.covariate_names();
        let channels = 1 + covariates.len();
        let t0 = panel.t0();
        let count = t0 + 1 - width - horizon;
        let first = if cfg.max_windows_per_unit > 0 {
            count.saturating_sub(cfg.max_windows_per_unit)
        } else {
            0
        };
        let kept = count - first;
        let held = heldout_count(kept, cfg.holdout_fraction);
        let mut set = WindowSet {
            width: width * channels,
            horizon,
            ..WindowSet::default()
        };
        for (u, unit) in panel.units().iter().enumerate() {
            for start in first..count {
                let pos = start + width;
                let level = mean(&unit.values[start..pos]);
                set.inputs
                    .extend(window_cells(unit, &covariates, start, pos, level, 1.0));
                set.targets
                    .extend(unit.values[pos..pos + horizon].iter().map(|v| v - level));
                set.unit.push(u);
                set.heldout.push(start >= count - held);
            }
        }
        let scale = target_scale(&set.inputs, channels);
        for (k, v) in set.inputs.iter_mut().enumerate() {
            if k % channels == 0 {
                *v /= scale;
            }
        }
        set.targets.iter_mut().for_each(|v| *v /= scale);
        set.build_features();
        let layout = Layout {
            width,
            channels,
            ff: cfg.hidden_mult * channels,
            blocks: cfg.n_blocks,
            horizon,
        };
        Ok(Self {
            layout,
            set,
            scale,
            covariates,
        })
    }

    fn into_objective(self, cfg: &MixerConfig) -> MixerObjective {
        MixerObjective {
            layout: self.layout,
            items: self.set.train_indices(),
            set: self.set,
            activation: cfg.activation,
            eps: cfg.norm_eps,
        }
    }
}

/// Row-major `W × C` cells: target minus `level` then covariates, for steps `start..pos`.
fn window_cells(
    unit: &crate::panel::UnitSeries,
    covariates: &[String],
    start: usize,
    pos: usize,
    level: f64,
    scale: f64,
) -> Vec<f64> {
    let mut cells = Vec::with_capacity((pos - start) * (1 + covariates.len()));
    for t in start..pos {
        cells.push((unit.values[t] - level) / scale);
        for name in covariates {
            cells.push(unit.covariates.get(name).map_or(0.0, |c| c[t]));
        }
    }
    cells
}

fn target_scale(cells: &[f64], channels: usize) -> f64 {
    let target: Vec<f64> = cells.iter().step_by(channels).copied().collect();
    let var = target.iter().map(|v| v * v).sum::<f64>() / target.len().max(1) as f64;
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

/// Time mixing starts at zero, feature mixing has a zero output layer, and the head is a
/// least-squares fit on the resulting block outputs.
fn initial_params(objective: &MixerObjective, seed: u64) -> Result<Vec<f64>, ForecastError> {
    let l = objective.layout;
    let mut params = vec![0.0; l.n_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = Normal::new(0.0, 1.0 / (l.channels as f64).sqrt()).expect("valid normal");
    for b in 0..l.blocks {
        let at = l.block(b);
        for t in 0..l.width {
            params[at.a_bias + t] = 0.01;
        }
        for k in 0..l.ff * l.channels {
            params[at.w1 + k] = w1.sample(&mut rng);
        }
        for k in 0..l.ff {
            params[at.b1 + k] = 0.01;
        }
    }
    let train = &objective.items;
    let mut s = Scratch::new(&l);
    let mut rows = Vec::with_capacity(train.len() * (l.width + 1));
    for &w in train {
        forward(&l, &params, objective.activation, objective.eps, objective.set.exog_features(w), &mut s);
        rows.extend((0..l.width).map(|t| s.x[t * l.channels]));
        rows.push(1.0);
    }
    let design = Matrix::new(train.len(), l.width + 1, rows)?;
    let ridge = 1e-8 * (design.data().iter().map(|v| v * v).sum::<f64>() / (l.width + 1) as f64).max(1.0);
    let system = RidgeSystem::new(&design, ridge)?;
    for j in 0..l.horizon {
        let y: Vec<f64> = train.iter().map(|&i| objective.set.target(i)[j]).collect();
        let beta = system.solve(&design, &y)?;
        params[l.head() + j * l.width..l.head() + (j + 1) * l.width].copy_from_slice(&beta[..l.width]);
        params[l.head_bias() + j] = beta[l.width];
    }
    Ok(params)
}

/// Fitted global mixer forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerModel {
    pub config: MixerConfig,
    pub width: usize,
    pub horizon: usize,
    pub covariates: Vec<String>,
    pub target_scale: f64,
    pub params: Vec<f64>,
    /// Held-out MSE (scaled units) of the returned parameters, or training MSE when
    /// nothing is held out.
    pub validation_score: f64,
    /// Training MSE of the warm-start parameters and of the returned parameters.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl MixerModel {
    pub fn fit(panel: &PanelDataset, cfg: &MixerConfig) -> Result<Self, ForecastError> {
        let prepared = Prepared::new(panel, cfg)?;
        let scale = prepared.scale;
        let covariates = prepared.covariates.clone();
        let heldout = prepared.set.heldout_indices();
        let objective = prepared.into_objective(cfg);
        let init = initial_params(&objective, cfg.optimizer.seed)?;
        let mut grad = vec![0.0; init.len()];
        let initial_train_loss = objective.full_value_and_grad(&init, &mut grad);
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
                    objective.mse(p, &heldout)
                }
            },
        )
        .map_err(ForecastError::non_finite)?;
        let final_train_loss = objective.full_value_and_grad(&outcome.params, &mut grad);
        Ok(Self {
            config: cfg.clone(),
            width: objective.layout.width,
            horizon: objective.layout.horizon,
            covariates,
            target_scale: scale,
            params: outcome.params,
            validation_score: outcome.score,
            initial_train_loss,
            final_train_loss,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            width: self.width,
            channels: 1 + self.covariates.len(),
            ff: self.config.hidden_mult * (1 + self.covariates.len()),
            blocks: self.config.n_blocks,
            horizon: self.horizon,
        }
    }

    /// Point counterfactual for `[t0, t0 + h)` from the last pre-period window.
    pub fn predict_unit(&self, panel: &PanelDataset, unit_id: &str) -> Result<Vec<f64>, ForecastError> {
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
        let level = mean(&unit.values[t0 - self.width..t0]);
        let cells = window_cells(unit, &self.covariates, t0 - self.width, t0, level, self.target_scale);
        let mut s = Scratch::new(&layout);
        forward(&layout, &self.params, self.config.activation, self.config.norm_eps, &cells, &mut s);
        Ok(s.out.iter().map(|o| o * self.target_scale + level).collect())
    }
}
