use serde::{Deserialize, Serialize};

use super::LocalError;
use crate::numerics::{minimize, ridge_solve, Matrix, OptimizerConfig, RidgeSystem};
use crate::panel::{deseasonalize, reseasonalize, seasonal_profile, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }
}

/// Candidate orders `p ∈ 0..=max_p`, `d ∈ 0..=max_d`, `q ∈ 0..=max_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArimaGrid {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaGrid {
    fn default() -> Self {
        Self {
            max_p: 3,
            max_d: 1,
            max_q: 3,
        }
    }
}

impl ArimaGrid {
    pub fn validate(&self) -> Result<(), LocalError> {
        if self.max_p > 3 || self.max_q > 3 || self.max_d > 1 {
            return Err(LocalError::BadConfig(format!(
                "orders are limited to p, q ≤ 3 and d ≤ 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn orders(&self) -> Vec<ArimaOrder> {
        let mut out = Vec::new();
        for d in 0..=self.max_d {
            for p in 0..=self.max_p {
                for q in 0..=self.max_q {
                    out.push(ArimaOrder { p, d, q });
                }
            }
        }
        out
    }

    /// First index of the original series whose residual enters every candidate's sum
    /// of squares, so criteria are computed on a common sample.
    pub fn sample_start(&self) -> usize {
        self.max_p + self.max_d
    }
}

/// Fitted ARIMA model. `intercept` is the mean of the differenced series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub aicc: f64,
    pub css: f64,
    /// Residuals enter the sum of squares from this index of the original series on.
    pub sample_start: usize,
}

impl ArimaModel {
    /// A model with given coefficients, not fitted to data.
    pub fn new(order: ArimaOrder, ar: Vec<f64>, ma: Vec<f64>, intercept: f64) -> Self {
        Self {
            order,
            ar,
            ma,
            intercept,
            sigma2: 0.0,
            aicc: 0.0,
            css: 0.0,
            sample_start: order.p + order.d,
        }
    }
}

pub fn difference(y: &[f64], d: usize) -> Vec<f64> {
    let mut out = y.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Inverse of [`difference`]: `initial` holds the first `d` values of the original series.
pub fn integrate(diffed: &[f64], d: usize, initial: &[f64]) -> Vec<f64> {
    assert_eq!(initial.len(), d, "need {d} initial values");
    // heads[k] = first value of the k-times differenced series
    let heads: Vec<f64> = (0..d).map(|k| difference(initial, k)[0]).collect();
    let mut out = diffed.to_vec();
    for k in (0..d).rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        level.push(heads[k]);
        for w in &out {
            let last = *level.last().expect("non-empty");
            level.push(last + w);
        }
        out = level;
    }
    out
}

/// Whether `x_t = Σ φ_i x_{t−i} + e_t` is stationary, via step-down of the reflection
/// coefficients.
pub fn is_stationary(ar: &[f64]) -> bool {
    let mut a = ar.to_vec();
    while let Some(&k) = a.last() {
        if !k.is_finite() || k.abs() >= 1.0 - 1e-8 {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        a = (0..m - 1).map(|i| (a[i] + k * a[m - 2 - i]) / denom).collect();
    }
    true
}

fn is_invertible(ma: &[f64]) -> bool {
    let neg: Vec<f64> = ma.iter().map(|t| -t).collect();
    is_stationary(&neg)
}

/// Conditional residuals `e_t` for `t ≥ start` (zero before) of the centred series `x`.
fn residuals(x: &[f64], ar: &[f64], ma: &[f64], start: usize) -> Vec<f64> {
    let mut e = vec![0.0; x.len()];
    for t in start..x.len() {
        let mut v = x[t];
        for (i, phi) in ar.iter().enumerate() {
            v -= phi * x[t - 1 - i];
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j && t - 1 - j >= start {
                v -= theta * e[t - 1 - j];
            }
        }
        e[t] = v;
    }
    e
}

/// Residuals and their Jacobian with respect to `[ar, ma]` (rows `t ≥ start`).
fn residuals_and_jacobian(
    x: &[f64],
    ar: &[f64],
    ma: &[f64],
    start: usize,
) -> (Vec<f64>, Matrix) {
    let (p, q) = (ar.len(), ma.len());
    let n = x.len();
    let e = residuals(x, ar, ma, start);
    let mut jac = Matrix::zeros(n, p + q);
    for t in start..n {
        for k in 0..p + q {
            let mut v = if k < p { -x[t - 1 - k] } else { 0.0 };
            if k >= p {
                let j = k - p;
                if t > j && t - 1 - j >= start {
                    v -= e[t - 1 - j];
                }
            }
            for (j, theta) in ma.iter().enumerate() {
                if t > j && t - 1 - j >= start {
                    v -= theta * jac[(t - 1 - j, k)];
                }
            }
            jac[(t, k)] = v;
        }
    }
    (e, jac)
}

fn sum_sq(e: &[f64], start: usize) -> f64 {
    e[start..].iter().map(|v| v * v).sum()
}

/// Conditional sum of squares of `series` (original scale) under the given coefficients,
/// counting residuals from `sample_start` on.
pub fn css_objective(
    series: &[f64],
    order: ArimaOrder,
    ar: &[f64],
    ma: &[f64],
    intercept: f64,
    sample_start: usize,
) -> f64 {
    let w = difference(series, order.d);
    let x: Vec<f64> = w.iter().map(|v| v - intercept).collect();
    let start = sample_start - order.d;
    sum_sq(&residuals(&x, ar, ma, start), start)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least squares of `x_t` on the columns produced by `row(t)` for `t ∈ rows`.
fn lagged_ols(
    x: &[f64],
    rows: std::ops::Range<usize>,
    k: usize,
    row: impl Fn(usize, usize) -> f64,
) -> Option<Vec<f64>> {
    let t_idx: Vec<usize> = rows.collect();
    if t_idx.len() <= k {
        return None;
    }
    let design = Matrix::from_fn(t_idx.len(), k, |r, c| row(t_idx[r], c));
    let y: Vec<f64> = t_idx.iter().map(|&t| x[t]).collect();
    let scale = design.data().iter().map(|v| v * v).sum::<f64>() / k as f64;
    ridge_solve(&design, &y, 1e-10 * scale.max(f64::MIN_POSITIVE)).ok()
}

/// Hannan–Rissanen start: a long autoregression supplies residual estimates, then the
/// ARMA coefficients come from one regression on lagged values and lagged residuals.
fn hannan_rissanen(x: &[f64], p: usize, q: usize, start: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let long = (n / 4).clamp(p + q, 10).max(1);
    let mut ehat = vec![0.0; n];
    if let Some(phi) = lagged_ols(x, long..n, long, |t, c| x[t - 1 - c]) {
        for t in long..n {
            ehat[t] = x[t] - (0..long).map(|c| phi[c] * x[t - 1 - c]).sum::<f64>();
        }
    }
    let first = start.max(long + q);
    let coef = lagged_ols(x, first..n, p + q, |t, c| {
        if c < p {
            x[t - 1 - c]
        } else {
            ehat[t - 1 - (c - p)]
        }
    })
    .unwrap_or_else(|| vec![0.0; p + q]);
    let mut ar = coef[..p].to_vec();
    let mut ma = coef[p..].to_vec();
    // pull an explosive start back inside the admissible region
    for _ in 0..60 {
        if is_stationary(&ar) && is_invertible(&ma) {
            break;
        }
        ar.iter_mut().chain(ma.iter_mut()).for_each(|c| *c *= 0.8);
    }
    (ar, ma)
}

/// Damped Gauss–Newton steps on the sum of squares, kept only when they stay admissible
/// and lower the objective.
fn gauss_newton_polish(x: &[f64], params: &mut Vec<f64>, p: usize, start: usize) {
    let mut damping = 1e-3;
    let (mut e, mut jac) = residuals_and_jacobian(x, &params[..p], &params[p..], start);
    let mut css = sum_sq(&e, start);
    for _ in 0..100 {
        let rows = x.len() - start;
        let k = params.len();
        let jr = Matrix::from_fn(rows, k, |r, c| jac[(start + r, c)]);
        let grad = jr.t_matvec(&e[start..]);
        let diag_scale = (0..k).map(|c| jr.data().iter().skip(c).step_by(k).map(|v| v * v).sum::<f64>()).sum::<f64>() / k as f64;
        let mut improved = false;
        while damping < 1e12 {
            let Ok(system) = RidgeSystem::new(&jr, damping * diag_scale.max(f64::MIN_POSITIVE)) else {
                damping *= 10.0;
                continue;
            };
            let delta = system.solve_normal(&grad);
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(a, b)| a - b).collect();
            if is_stationary(&trial[..p]) && is_invertible(&trial[p..]) {
                let (e2, j2) = residuals_and_jacobian(x, &trial[..p], &trial[p..], start);
                let css2 = sum_sq(&e2, start);
                if css2 < css {
                    let gain = (css - css2) / css.max(f64::MIN_POSITIVE);
                    *params = trial;
                    e = e2;
                    jac = j2;
                    css = css2;
                    damping = (damping / 10.0).max(1e-12);
                    improved = gain > 1e-14;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
}

/// CSS fit of one order with the mean fixed at the sample mean of the differenced series.
/// Returns `None` when no admissible coefficients are found.
pub fn fit_arima_order(y: &[f64], order: ArimaOrder, sample_start: usize) -> Option<ArimaModel> {
    let ArimaOrder { p, d, q } = order;
    if sample_start < p + d || y.len() <= sample_start + 1 {
        return None;
    }
    let w = difference(y, d);
    let mu = mean(&w);
    let x: Vec<f64> = w.iter().map(|v| v - mu).collect();
    let start = sample_start - d;
    let n_eff = x.len() - start;

    let params: Vec<f64> = if p + q == 0 {
        Vec::new()
    } else if q == 0 {
        lagged_ols(&x, start..x.len(), p, |t, c| x[t - 1 - c])?
    } else {
        let (ar, ma) = hannan_rissanen(&x, p, q, start);
        let mut init = ar;
        init.extend(ma);
        let norm = 1.0 / n_eff as f64;
        let objective = |theta: &[f64], grad: &mut [f64]| {
            if !is_stationary(&theta[..p]) || !is_invertible(&theta[p..]) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NAN;
            }
            let (e, jac) = residuals_and_jacobian(&x, &theta[..p], &theta[p..], start);
            for (k, g) in grad.iter_mut().enumerate() {
                *g = 2.0 * norm * (start..x.len()).map(|t| e[t] * jac[(t, k)]).sum::<f64>();
            }
            norm * sum_sq(&e, start)
        };
        let cfg = OptimizerConfig {
            step_size: 1e-2,
            max_iters: 300,
            tolerance: 1e-12,
            seed: 0,
        };
        let mut params = match minimize(&objective, &init, &cfg) {
            Ok(m) => m.params,
            Err(_) => init,
        };
        gauss_newton_polish(&x, &mut params, p, start);
        params
    };
    let (ar, ma) = params.split_at(p);
    if !is_stationary(ar) || !is_invertible(ma) {
        return None;
    }
    let css = sum_sq(&residuals(&x, ar, ma, start), start);
    let k = (p + q + 2) as f64;
    let n = n_eff as f64;
    if n - k - 1.0 <= 0.0 {
        return None;
    }
    let sigma2 = (css / n).max(f64::MIN_POSITIVE);
    let aicc = n * sigma2.ln() + 2.0 * k + 2.0 * k * (k + 1.0) / (n - k - 1.0);
    Some(ArimaModel {
        order,
        ar: ar.to_vec(),
        ma: ma.to_vec(),
        intercept: mu,
        sigma2,
        aicc,
        css,
        sample_start,
    })
}

/// Minimum-AICc admissible model over the grid.
pub fn fit_carima(series_pre: &[f64], grid: &ArimaGrid) -> Result<ArimaModel, LocalError> {
    grid.validate()?;
    if series_pre.len() < 20 {
        return Err(LocalError::TooShort {
            needed: 20,
            available: series_pre.len(),
        });
    }
    if series_pre.iter().any(|v| !v.is_finite()) {
        return Err(crate::numerics::NumericsError::NonFinite.into());
    }
    let start = grid.sample_start();
    grid.orders()
        .into_iter()
        .filter_map(|order| fit_arima_order(series_pre, order, start))
        .min_by(|a, b| a.aicc.total_cmp(&b.aicc))
        .ok_or(LocalError::NoValidModel)
}

/// Recursive mean forecast with future innovations set to zero, integrated back `d` times.
pub fn forecast_arima(model: &ArimaModel, series_pre: &[f64], h: usize) -> Vec<f64> {
    let d = model.order.d;
    let w = difference(series_pre, d);
    let mut x: Vec<f64> = w.iter().map(|v| v - model.intercept).collect();
    let start = model.sample_start.saturating_sub(d).max(model.order.p).min(x.len());
    let mut e = residuals(&x, &model.ar, &model.ma, start);
    let n = x.len();
    for k in 0..h {
        let t = n + k;
        let mut v = 0.0;
        for (i, phi) in model.ar.iter().enumerate() {
            if t > i {
                v += phi * x[t - 1 - i];
            }
        }
        for (j, theta) in model.ma.iter().enumerate() {
            if t > j {
                v += theta * e[t - 1 - j];
            }
        }
        x.push(v);
        e.push(0.0);
    }
    let mut path: Vec<f64> = x[n..].iter().map(|v| v + model.intercept).collect();
    // integrate from the last observed value of each differencing level
    for level in (0..d).rev() {
        let base = *difference(series_pre, level).last().expect("series longer than d");
        let mut acc = base;
        for v in &mut path {
            acc += *v;
            *v = acc;
        }
    }
    path
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarimaConfig {
    /// Seasonal profile period removed before fitting (1 disables).
    pub season: usize,
    pub grid: ArimaGrid,
}

impl Default for CarimaConfig {
    fn default() -> Self {
        Self {
            season: 7,
            grid: ArimaGrid::default(),
        }
    }
}

/// Counterfactual path for one unit: remove the pre-period seasonal profile, fit, forecast
/// the post period, and add the profile back.
pub fn arima_counterfactual(
    panel: &PanelDataset,
    unit_id: &str,
    cfg: &CarimaConfig,
) -> Result<(ArimaModel, Vec<f64>), LocalError> {
    let unit = panel.unit(unit_id)?;
    let t0 = panel.t0();
    let pre = &unit.values[..t0];
    let profile = seasonal_profile(pre, cfg.season.max(1))?;
    let adjusted = deseasonalize(pre, &profile, 0);
    let model = fit_carima(&adjusted, &cfg.grid)?;
    let path = forecast_arima(&model, &adjusted, panel.horizon());
    Ok((model, reseasonalize(&path, &profile, t0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ar1_forecast_decays_geometrically() {
        let m = ArimaModel::new(ArimaOrder::new(1, 0, 0), vec![0.5], vec![], 0.0);
        assert_eq!(forecast_arima(&m, &[1.0, 3.0, 4.0], 3), vec![2.0, 1.0, 0.5]);
    }

    #[test]
    fn random_walk_forecast_is_flat() {
        let m = ArimaModel::new(ArimaOrder::new(0, 1, 0), vec![], vec![], 0.0);
        assert_eq!(forecast_arima(&m, &[3.0, 5.0, 7.0], 4), vec![7.0; 4]);
    }

    #[test]
    fn white_noise_model_forecasts_its_mean() {
        let m = ArimaModel::new(ArimaOrder::new(0, 0, 0), vec![], vec![], 2.5);
        assert_eq!(forecast_arima(&m, &[1.0, 9.0], 3), vec![2.5; 3]);
    }

    #[test]
    fn stationarity_region() {
        assert!(is_stationary(&[]));
        assert!(is_stationary(&[0.9]));
        assert!(!is_stationary(&[1.0]));
        assert!(is_stationary(&[0.5, 0.3]));
        assert!(!is_stationary(&[0.6, 0.5]));
        assert!(!is_stationary(&[0.0, -1.2]));
        assert!(is_invertible(&[0.5]));
        assert!(!is_invertible(&[1.5]));
    }

    #[test]
    fn grid_is_bounded() {
        assert!(ArimaGrid { max_p: 4, ..ArimaGrid::default() }.validate().is_err());
        assert_eq!(ArimaGrid::default().orders().len(), 32);
    }

    proptest! {
        #[test]
        fn difference_round_trip_is_exact(y in proptest::collection::vec(-1000i32..1000, 3..40), d in 0usize..3) {
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let back = integrate(&difference(&y, d), d, &y[..d]);
            prop_assert_eq!(back, y);
        }

        #[test]
        fn stationarity_matches_ar2_triangle(a in -2.5f64..2.5, b in -1.5f64..1.5) {
            let inside = b.abs() < 1.0 && a + b < 1.0 && b - a < 1.0;
            let margin = (1.0 - b.abs()).min(1.0 - a - b).min(1.0 - b + a);
            prop_assume!(margin.abs() > 1e-6);
            prop_assert_eq!(is_stationary(&[a, b]), inside);
        }
    }
}
