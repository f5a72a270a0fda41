use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Combined sample size up to which the exact null distribution is enumerated.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Mann–Whitney U of the treated sample (midranks for ties).
    pub u_statistic: f64,
    /// One-sided: treated errors stochastically larger than control errors.
    pub p_value: f64,
    pub method: TestMethod,
    pub n_control: usize,
    pub n_treated: usize,
}

impl WilcoxonResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Midranks (1-based) of `values`.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One-sided rank-sum test of `treated > control`.
///
/// Exact enumeration over all treated subsets of the pooled midranks when the combined
/// size is at most [`EXACT_LIMIT`]; otherwise the normal approximation with tie and
/// continuity corrections.
pub fn placebo_test(control: &[f64], treated: &[f64]) -> Result<WilcoxonResult, EvalError> {
    let method = if control.len() + treated.len() <= EXACT_LIMIT {
        TestMethod::Exact
    } else {
        TestMethod::NormalApproximation
    };
    rank_sum_test(control, treated, method)
}

/// The same one-sided test with the p-value method forced.
pub fn rank_sum_test(control: &[f64], treated: &[f64], method: TestMethod) -> Result<WilcoxonResult, EvalError> {
    if control.is_empty() || treated.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    if control.iter().chain(treated).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (nc, nt) = (control.len(), treated.len());
    let pooled: Vec<f64> = control.iter().chain(treated).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[nc..].iter().sum();
    let u = w - (nt * (nt + 1)) as f64 / 2.0;

    let p_value = match method {
        TestMethod::Exact => exact_upper_tail(&ranks, nt, w),
        TestMethod::NormalApproximation => normal_upper_tail(&ranks, nc, nt, u),
    };
    Ok(WilcoxonResult {
        u_statistic: u,
        p_value: p_value.clamp(0.0, 1.0),
        method,
        n_control: nc,
        n_treated: nt,
    })
}

/// `P(W ≥ w)` under random assignment of `k` of the pooled ranks to the treated group.
/// Midranks are multiples of 1/2, so doubled ranks index an integer count table.
fn exact_upper_tail(ranks: &[f64], k: usize, w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; k + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for j in (1..=k).rev() {
            for s in (r..=max_sum).rev() {
                counts[j][s] += counts[j - 1][s - r];
            }
        }
    }
    let target = (2.0 * w).round() as usize;
    let total: u64 = counts[k].iter().sum();
    let upper: u64 = counts[k][target.min(max_sum + 1)..].iter().sum();
    upper as f64 / total as f64
}

fn normal_upper_tail(ranks: &[f64], nc: usize, nt: usize, u: f64) -> f64 {
    let n = (nc + nt) as f64;
    let mean = (nc * nt) as f64 / 2.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = (nc * nt) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    1.0 - normal.cdf(z)
}
