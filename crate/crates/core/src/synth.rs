//! Synthetic benchmark: three-sine plus Gaussian-process series, optional
//! multiplicative trend, and a decile-graded intervention on a random 30% of units.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{cholesky_psd, Matrix, NumericsError, PsdFactor};
use crate::panel::{build_panel, PanelDataset, PanelError, SimulationTruth, UnitSeries};

/// Jitter tried first when the GP covariance needs repair.
const GP_JITTER_START: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("treated pre-period values have zero spread")]
    DegenerateSigma,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_units: usize,
    pub length: usize,
    pub trend: bool,
    pub trend_rate: f64,
    pub seed: u64,
    pub base_level: f64,
    pub beta_range: (f64, f64),
    pub periods: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_units: 50,
            length: 90,
            trend: false,
            trend_rate: 1.00005,
            seed: 0,
            base_level: 100.0,
            beta_range: (5.0, 10.0),
            periods: [1, 7, 30],
        }
    }
}

impl SynthConfig {
    pub fn new(n_units: usize, length: usize, trend: bool, seed: u64) -> Self {
        Self {
            n_units,
            length,
            trend,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_units < 2 {
            return Err(SynthError::BadConfig("need at least 2 units".into()));
        }
        if self.length <= 24 {
            return Err(SynthError::BadConfig(format!(
                "length {} must exceed 24",
                self.length
            )));
        }
        if !(self.trend_rate > 0.0) {
            return Err(SynthError::BadConfig("trend_rate must be positive".into()));
        }
        if self.periods.contains(&0) {
            return Err(SynthError::BadConfig("periods must be positive".into()));
        }
        let (lo, hi) = self.beta_range;
        if !(lo <= hi) {
            return Err(SynthError::BadConfig("beta_range must be ordered".into()));
        }
        Ok(())
    }

    /// `stationary_50x90`, `trend_300x420`, ...
    pub fn label(&self) -> String {
        let kind = if self.trend { "trend" } else { "stationary" };
        format!("{kind}_{}x{}", self.n_units, self.length)
    }
}

/// `sin(2π t / period)` with the phase reduced in integers, so whole periods give exactly 0.
fn periodic_sine(t: usize, period: usize) -> f64 {
    let phase = (t % period) as f64 / period as f64;
    (2.0 * PI * phase).sin()
}

/// Untrended generating function at 1-based time `t`.
pub fn dgp_value(cfg: &SynthConfig, t: usize, beta0: f64, betas: [f64; 3]) -> f64 {
    cfg.base_level
        + beta0
        + betas
            .iter()
            .zip(cfg.periods)
            .map(|(b, p)| b * periodic_sine(t, p))
            .sum::<f64>()
}

/// Multiplicative trend `rate^t`.
pub fn trend_factor(rate: f64, t: usize) -> f64 {
    rate.powi(t as i32)
}

/// Polynomially decaying covariance `|t₁ − t₂|⁻¹` with unit diagonal.
pub fn gp_covariance(length: usize) -> Matrix {
    Matrix::from_fn(length, length, |i, j| {
        if i == j {
            1.0
        } else {
            1.0 / (i as f64 - j as f64).abs()
        }
    })
}

/// Repaired Cholesky factor of the GP covariance, reusable across draws.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: PsdFactor,
}

impl GpSampler {
    pub fn new(length: usize) -> Result<Self, SynthError> {
        if length == 0 {
            return Err(SynthError::BadConfig("GP length must be positive".into()));
        }
        let factor = cholesky_psd(&gp_covariance(length), GP_JITTER_START)?;
        Ok(Self { factor })
    }

    pub fn factor(&self) -> &PsdFactor {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.lower.rows();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.factor.lower;
        (0..n)
            .map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum())
            .collect()
    }
}

/// One draw of the level process `β₀(t)`, deterministic per seed.
pub fn sample_gp_beta0(length: usize, seed: u64) -> Result<Vec<f64>, SynthError> {
    let sampler = GpSampler::new(length)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Derive an independent stream seed (splitmix64 finaliser).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Series generator holding the GP factor for its configured length.
#[derive(Debug, Clone)]
pub struct SeriesGenerator {
    cfg: SynthConfig,
    gp: GpSampler,
}

impl SeriesGenerator {
    pub fn new(cfg: &SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            gp: GpSampler::new(cfg.length)?,
        })
    }

    pub fn series(&self, unit_seed: u64) -> Vec<f64> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(unit_seed);
        let beta0 = self.gp.sample(&mut rng);
        let (lo, hi) = cfg.beta_range;
        (1..=cfg.length)
            .map(|t| {
                let betas = [
                    rng.random_range(lo..=hi),
                    rng.random_range(lo..=hi),
                    rng.random_range(lo..=hi),
                ];
                let y = dgp_value(cfg, t, beta0[t - 1], betas);
                if cfg.trend {
                    y * trend_factor(cfg.trend_rate, t)
                } else {
                    y
                }
            })
            .collect()
    }

    /// All unit series of the configured panel, ids `unit_000`, `unit_001`, ...
    pub fn panel_series(&self) -> Vec<(String, Vec<f64>)> {
        (0..self.cfg.n_units)
            .map(|i| {
                (
                    format!("unit_{i:03}"),
                    self.series(mix_seed(self.cfg.seed, i as u64)),
                )
            })
            .collect()
    }
}

pub fn generate_series(cfg: &SynthConfig, unit_seed: u64) -> Result<Vec<f64>, SynthError> {
    Ok(SeriesGenerator::new(cfg)?.series(unit_seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionSpec {
    pub treat_fraction: f64,
    pub post_len: usize,
    /// Shift for each pair of deciles, in units of σ.
    pub decile_constants: [f64; 5],
    /// Standard deviation of the pooled treated pre-period values; set by injection.
    pub sigma: Option<f64>,
}

impl Default for InterventionSpec {
    fn default() -> Self {
        Self {
            treat_fraction: 0.3,
            post_len: 24,
            decile_constants: [0.3, 0.6, 0.9, 1.2, 1.5],
            sigma: None,
        }
    }
}

impl InterventionSpec {
    /// Same split and timing with no effect (A/A runs).
    pub fn null() -> Self {
        Self {
            decile_constants: [0.0; 5],
            ..Self::default()
        }
    }

    pub fn validate(&self, n_units: usize, length: usize) -> Result<usize, SynthError> {
        if !(self.treat_fraction > 0.0 && self.treat_fraction < 1.0) {
            return Err(SynthError::BadConfig(format!(
                "treat_fraction {} outside (0, 1)",
                self.treat_fraction
            )));
        }
        if self.post_len == 0 || self.post_len >= length {
            return Err(SynthError::BadConfig(format!(
                "post_len {} must lie in [1, {length})",
                self.post_len
            )));
        }
        if self.decile_constants.windows(2).any(|w| w[1] < w[0]) {
            return Err(SynthError::BadConfig(
                "decile constants must be non-decreasing".into(),
            ));
        }
        let n_treated = (n_units as f64 * self.treat_fraction).round() as usize;
        if n_treated == 0 || n_treated >= n_units {
            return Err(SynthError::BadConfig(format!(
                "{n_units} units with fraction {} leaves an empty group",
                self.treat_fraction
            )));
        }
        Ok(n_treated)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The nine decile cut points of `values`.
pub fn decile_thresholds(values: &[f64]) -> [f64; 9] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    std::array::from_fn(|k| quantile_sorted(&sorted, (k + 1) as f64 / 10.0))
}

/// Decile-pair group (0..5) of `y`: values above the last cut land in group 4, below the
/// first in group 0.
pub fn decile_group(y: f64, thresholds: &[f64; 9]) -> usize {
    let decile = thresholds.iter().filter(|&&q| y > q).count();
    decile / 2
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub panel: PanelDataset,
    pub truth: SimulationTruth,
    /// The spec with `sigma` filled in.
    pub spec: InterventionSpec,
    pub thresholds: [f64; 9],
}

/// Pick the treated group, then shift every treated post-period value down by the
/// constant of its pre-period decile group times σ.
pub fn inject_intervention(
    series: Vec<(String, Vec<f64>)>,
    spec: &InterventionSpec,
    seed: u64,
) -> Result<Injected, SynthError> {
    let n = series.len();
    let length = series.first().map_or(0, |(_, v)| v.len());
    let n_treated = spec.validate(n, length)?;
    let t0 = length - spec.post_len;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut treated = vec![false; n];
    for &i in &order[..n_treated] {
        treated[i] = true;
    }

    let pooled: Vec<f64> = series
        .iter()
        .zip(&treated)
        .filter(|(_, &t)| t)
        .flat_map(|((_, v), _)| v[..t0].iter().copied())
        .collect();
    let sigma = sample_std(&pooled);
    if !(sigma > 0.0) {
        return Err(SynthError::DegenerateSigma);
    }
    let thresholds = decile_thresholds(&pooled);

    let mut counterfactuals = BTreeMap::new();
    let mut shift_total = 0.0;
    let mut units = Vec::with_capacity(n);
    for ((id, mut values), is_treated) in series.into_iter().zip(treated) {
        if is_treated {
            counterfactuals.insert(id.clone(), values[t0..].to_vec());
            for y in &mut values[t0..] {
                let shift = spec.decile_constants[decile_group(*y, &thresholds)] * sigma;
                *y -= shift;
                shift_total += shift;
            }
        }
        units.push(UnitSeries::new(id, is_treated, values));
    }
    let true_att = -shift_total / (n_treated * spec.post_len) as f64;
    let panel = build_panel(units, t0)?;
    Ok(Injected {
        panel,
        truth: SimulationTruth {
            counterfactuals,
            true_att,
        },
        spec: InterventionSpec {
            sigma: Some(sigma),
            ..spec.clone()
        },
        thresholds,
    })
}

/// Default season length for the daily synthetic data (weekly term).
pub const SYNTHETIC_SEASONALITY: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub seed: u64,
    pub synth: SynthConfig,
    pub injected: Injected,
}

impl Scenario {
    pub fn panel(&self) -> &PanelDataset {
        &self.injected.panel
    }

    pub fn truth(&self) -> &SimulationTruth {
        &self.injected.truth
    }

    pub fn sigma(&self) -> f64 {
        self.injected.spec.sigma.unwrap_or(f64::NAN)
    }
}

/// Simulate one dataset and inject the intervention.
pub fn generate_scenario(cfg: &SynthConfig, spec: &InterventionSpec) -> Result<Scenario, SynthError> {
    let series = SeriesGenerator::new(cfg)?.panel_series();
    let injected = inject_intervention(series, spec, mix_seed(cfg.seed, u64::MAX))?;
    Ok(Scenario {
        label: cfg.label(),
        seed: cfg.seed,
        synth: cfg.clone(),
        injected,
    })
}

/// Unit counts × lengths × {stationary, trend}.
pub const GRID_UNITS: [usize; 2] = [50, 300];
pub const GRID_LENGTHS: [usize; 2] = [90, 420];

pub fn grid_configs(seed: u64) -> Vec<SynthConfig> {
    let mut out = Vec::with_capacity(8);
    for trend in [false, true] {
        for n in GRID_UNITS {
            for len in GRID_LENGTHS {
                out.push(SynthConfig::new(n, len, trend, seed));
            }
        }
    }
    out
}

/// The eight-scenario grid for every seed.
pub fn generate_scenario_grid(seeds: &[u64]) -> Result<Vec<Scenario>, SynthError> {
    if seeds.is_empty() {
        return Err(SynthError::BadConfig("no seeds given".into()));
    }
    let spec = InterventionSpec::default();
    let mut out = Vec::new();
    for &seed in seeds {
        // the GP factor depends only on length; reuse it across the grid
        let mut generators: BTreeMap<usize, GpSampler> = BTreeMap::new();
        for cfg in grid_configs(seed) {
            let gp = match generators.get(&cfg.length) {
                Some(gp) => gp.clone(),
                None => {
                    let gp = GpSampler::new(cfg.length)?;
                    generators.insert(cfg.length, gp.clone());
                    gp
                }
            };
            cfg.validate()?;
            let generator = SeriesGenerator {
                cfg: cfg.clone(),
                gp,
            };
            let injected =
                inject_intervention(generator.panel_series(), &spec, mix_seed(seed, u64::MAX))?;
            out.push(Scenario {
                label: cfg.label(),
                seed,
                synth: cfg,
                injected,
            });
        }
    }
    Ok(out)
}
