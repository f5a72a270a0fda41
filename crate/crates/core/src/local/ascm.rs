use serde::{Deserialize, Serialize};

use super::sc::{fit_sc_with, ScConfig};
use super::{DonorPool, LocalError, ScWeights};
use crate::numerics::{Matrix, NumericsError};
use crate::panel::PanelDataset;

/// Thirteen log-spaced penalties from 1e-3 to 1e3.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscmConfig {
    /// Ridge penalties, in units of the mean squared norm of the centred donor
    /// pre-period vectors.
    pub lambda_grid: Vec<f64>,
    pub sc: ScConfig,
}

impl Default for AscmConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            sc: ScConfig::default(),
        }
    }
}

/// Synthetic control plus a ridge estimate of its pre-period imbalance bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedModel {
    pub base: ScWeights,
    /// Zero-sum adjustment to the donor weights; `gamma + ridge_coeffs` may be negative.
    pub ridge_coeffs: Vec<f64>,
    /// Selected penalty on the absolute scale.
    pub lambda: f64,
    /// Selected grid entry on the relative scale.
    pub lambda_relative: f64,
    /// Leave-one-donor-out squared error per grid entry.
    pub loo_errors: Vec<f64>,
    /// Bias correction per post step.
    pub bias_estimate: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl AugmentedModel {
    pub fn weights(&self) -> Vec<f64> {
        self.base
            .gamma
            .iter()
            .zip(&self.ridge_coeffs)
            .map(|(g, r)| g + r)
            .collect()
    }
}

/// Centred Gram matrix of the donors' pre-period vectors and its eigendecomposition.
struct KernelRidge {
    /// Centred donor vectors, `J × t0`.
    centred: Matrix,
    values: Vec<f64>,
    /// Eigenvectors in columns, `J × J`.
    vectors: Matrix,
    scale: f64,
}

impl KernelRidge {
    fn new(controls_pre: &Matrix) -> Self {
        let (t0, j) = (controls_pre.rows(), controls_pre.cols());
        let means: Vec<f64> = (0..t0)
            .map(|t| controls_pre.row(t).iter().sum::<f64>() / j as f64)
            .collect();
        let centred = Matrix::from_fn(j, t0, |d, t| controls_pre[(t, d)] - means[t]);
        let kernel = centred.transpose().gram();
        let eig = nalgebra::SymmetricEigen::new(kernel.to_nalgebra());
        let values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let vectors = Matrix::from_nalgebra(&eig.eigenvectors);
        let scale = values.iter().sum::<f64>() / j as f64;
        Self {
            centred,
            values,
            vectors,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    fn n(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(d)) Vᵀ x`
    fn apply(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let proj = self.vectors.t_matvec(x);
        let scaled: Vec<f64> = proj.iter().zip(&self.values).map(|(p, d)| p * f(*d)).collect();
        self.vectors.matvec(&scaled)
    }

    /// Total leave-one-out squared error over all response columns of `y` (`h × J`).
    fn loo_error(&self, y: &Matrix, lambda: f64) -> f64 {
        let n = self.n();
        let leverage: Vec<f64> = (0..n)
            .map(|i| {
                let h: f64 = (0..n)
                    .map(|k| self.vectors[(i, k)].powi(2) * self.values[k] / (self.values[k] + lambda))
                    .sum();
                1.0 / n as f64 + h
            })
            .collect();
        let mut total = 0.0;
        for t in 0..y.rows() {
            let row = y.row(t);
            let mean = row.iter().sum::<f64>() / n as f64;
            let centred: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let fitted = self.apply(&centred, |d| d / (d + lambda));
            for i in 0..n {
                let resid = centred[i] - fitted[i];
                let denom = (1.0 - leverage[i]).max(1e-12);
                total += (resid / denom).powi(2);
            }
        }
        total
    }
}

/// Augment an SC fit with a ridge regression of donor post outcomes on donor
/// pre-period vectors (with intercept), selecting the penalty by leave-one-donor-out error.
///
/// `controls_pre` is `t0 × J`, `controls_post` is `h × J`. Grid values are relative to
/// the mean squared norm of the centred donor vectors.
pub fn fit_ascm(
    treated_pre: &[f64],
    controls_pre: &Matrix,
    controls_post: &Matrix,
    lambda_grid: &[f64],
) -> Result<AugmentedModel, LocalError> {
    fit_ascm_with(treated_pre, controls_pre, controls_post, lambda_grid, &ScConfig::default())
}

/// [`fit_ascm`] with explicit settings for the SC solver.
pub fn fit_ascm_with(
    treated_pre: &[f64],
    controls_pre: &Matrix,
    controls_post: &Matrix,
    lambda_grid: &[f64],
    sc: &ScConfig,
) -> Result<AugmentedModel, LocalError> {
    if controls_post.cols() != controls_pre.cols() {
        return Err(LocalError::LengthMismatch {
            expected: controls_pre.cols(),
            found: controls_post.cols(),
        });
    }
    if controls_post.rows() == 0 {
        return Err(LocalError::TooShort {
            needed: 1,
            available: 0,
        });
    }
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(LocalError::BadConfig(format!("lambda grid {lambda_grid:?}")));
    }
    let base = fit_sc_with(treated_pre, controls_pre, sc)?;
    let kernel = KernelRidge::new(controls_pre);

    let loo_errors: Vec<f64> = lambda_grid
        .iter()
        .map(|rel| kernel.loo_error(controls_post, rel * kernel.scale))
        .collect();
    let best = loo_errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    let lambda_relative = lambda_grid[best];
    let lambda = lambda_relative * kernel.scale;

    let imbalance: Vec<f64> = base.residuals.clone();
    let projected = kernel.centred.matvec(&imbalance);
    if lambda == 0.0 && kernel.values.iter().any(|&d| d <= 1e-12 * kernel.scale) {
        return Err(NumericsError::Singular.into());
    }
    let a = kernel.apply(&projected, |d| 1.0 / (d + lambda));
    let mean_a = a.iter().sum::<f64>() / a.len() as f64;
    let ridge_coeffs: Vec<f64> = a.iter().map(|v| v - mean_a).collect();

    let bias_estimate = controls_post.matvec(&ridge_coeffs);
    let sc_path = base.predict(controls_post);
    let prediction = sc_path.iter().zip(&bias_estimate).map(|(s, b)| s + b).collect();
    Ok(AugmentedModel {
        base,
        ridge_coeffs,
        lambda,
        lambda_relative,
        loo_errors,
        bias_estimate,
        prediction,
    })
}

/// ASCM counterfactual for `unit_id` using all other controls as donors.
pub fn ascm_counterfactual(
    panel: &PanelDataset,
    unit_id: &str,
    cfg: &AscmConfig,
) -> Result<AugmentedModel, LocalError> {
    let pool = DonorPool::for_unit(panel, unit_id)?;
    let unit = panel.unit(unit_id)?;
    let mut model = fit_ascm_with(&unit.values[..panel.t0()], &pool.pre, &pool.post, &cfg.lambda_grid, &cfg.sc)?;
    model.base.donor_ids = pool.ids;
    Ok(model)
}
