use serde::{Deserialize, Serialize};

use super::{DonorPool, LocalError};
use crate::numerics::{dot, project_simplex, Matrix};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScConfig {
    /// Relative objective change that ends the iteration.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for ScConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iters: 100_000,
        }
    }
}

/// Simplex donor weights fitted on the pre-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScWeights {
    pub donor_ids: Vec<String>,
    pub gamma: Vec<f64>,
    /// Constant offset added to predictions; zero unless set by the caller.
    pub intercept: f64,
    /// Pre-period fit residuals `y − Cγ`.
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl ScWeights {
    /// `Cγ + intercept` for a `T × J` donor matrix.
    pub fn predict(&self, donors: &Matrix) -> Vec<f64> {
        donors
            .matvec(&self.gamma)
            .into_iter()
            .map(|v| v + self.intercept)
            .collect()
    }
}

/// `argmin_{γ ∈ simplex} ‖y − Cγ‖²` where `C` is `t0 × J` (one column per donor).
pub fn fit_sc(treated_pre: &[f64], controls_pre: &Matrix) -> Result<ScWeights, LocalError> {
    fit_sc_with(treated_pre, controls_pre, &ScConfig::default())
}

/// Accelerated projected gradient with adaptive restart, from the uniform weights.
pub fn fit_sc_with(
    treated_pre: &[f64],
    controls_pre: &Matrix,
    cfg: &ScConfig,
) -> Result<ScWeights, LocalError> {
    let j = controls_pre.cols();
    if j < 2 {
        return Err(LocalError::TooFewDonors(j));
    }
    if treated_pre.len() != controls_pre.rows() {
        return Err(LocalError::LengthMismatch {
            expected: controls_pre.rows(),
            found: treated_pre.len(),
        });
    }
    let gram = controls_pre.gram();
    let cty = controls_pre.t_matvec(treated_pre);
    let yty = dot(treated_pre, treated_pre);
    let lipschitz = 2.0 * largest_eigenvalue(&gram);
    let floor = 1e-14 * yty.max(f64::MIN_POSITIVE);

    let mut x = vec![1.0 / j as f64; j];
    // G·x and G·z are carried along; G·z is linear in the iterates
    let mut gx = gram.matvec(&x);
    let mut f = (dot(&x, &gx) - 2.0 * dot(&x, &cty) + yty).max(0.0);
    let mut z = x.clone();
    let mut gz = gx.clone();
    let mut momentum: f64 = 1.0;
    let mut iterations = 0;
    if lipschitz > 0.0 {
        while iterations < cfg.max_iters {
            iterations += 1;
            let step: Vec<f64> = z
                .iter()
                .zip(gz.iter().zip(&cty))
                .map(|(zi, (gi, ci))| zi - 2.0 * (gi - ci) / lipschitz)
                .collect();
            let next = project_simplex(&step);
            let g_next = gram.matvec(&next);
            let f_next = (dot(&next, &g_next) - 2.0 * dot(&next, &cty) + yty).max(0.0);
            if f_next > f {
                if momentum == 1.0 {
                    // a plain projected step no longer decreases the objective
                    break;
                }
                // restart momentum from the last iterate
                z.clone_from(&x);
                gz.clone_from(&gx);
                momentum = 1.0;
                continue;
            }
            let change = f - f_next;
            let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next_momentum;
            z = next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            gz = g_next.iter().zip(&gx).map(|(a, b)| a + beta * (a - b)).collect();
            momentum = next_momentum;
            x = next;
            gx = g_next;
            f = f_next;
            if change <= cfg.tolerance * f.max(floor) {
                break;
            }
        }
    }
    let fitted = controls_pre.matvec(&x);
    let residuals: Vec<f64> = treated_pre.iter().zip(&fitted).map(|(y, p)| y - p).collect();
    Ok(ScWeights {
        donor_ids: Vec::new(),
        objective: dot(&residuals, &residuals),
        gamma: x,
        intercept: 0.0,
        residuals,
        iterations,
    })
}

/// Power iteration on a symmetric positive semidefinite matrix.
pub(crate) fn largest_eigenvalue(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
    let mut value = 0.0;
    for _ in 0..500 {
        let w = m.matvec(&v);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w) / dot(&v, &v);
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - value).abs() <= 1e-12 * next.abs() {
            value = next;
            break;
        }
        value = next;
    }
    // slight overestimate keeps 1/L a safe step
    value * 1.01
}

/// SC counterfactual for `unit_id` over the post period using all other controls as donors.
pub fn sc_counterfactual(
    panel: &PanelDataset,
    unit_id: &str,
) -> Result<(ScWeights, Vec<f64>), LocalError> {
    let pool = DonorPool::for_unit(panel, unit_id)?;
    let unit = panel.unit(unit_id)?;
    let mut weights = fit_sc(&unit.values[..panel.t0()], &pool.pre)?;
    weights.donor_ids = pool.ids;
    let path = weights.predict(&pool.post);
    Ok((weights, path))
}
