use super::NumericsError;

fn check_tau(tau: f64) -> Result<(), NumericsError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(NumericsError::BadTau(tau))
    }
}

/// Quantile (pinball) loss of predicting `q` for observation `y` at level `tau`.
pub fn pinball_loss(y: f64, q: f64, tau: f64) -> Result<f64, NumericsError> {
    check_tau(tau)?;
    Ok(pinball_unchecked(y, q, tau))
}

#[inline]
pub(crate) fn pinball_unchecked(y: f64, q: f64, tau: f64) -> f64 {
    if y >= q {
        tau * (y - q)
    } else {
        (1.0 - tau) * (q - y)
    }
}

/// Derivative of the pinball loss with respect to the prediction `q` (zero at the kink).
#[inline]
pub fn pinball_grad(y: f64, q: f64, tau: f64) -> f64 {
    if y > q {
        -tau
    } else if y < q {
        1.0 - tau
    } else {
        0.0
    }
}

/// Quantile-averaged CRPS approximation: `2 · mean_k pinball(y, q_k, τ_k)`.
pub fn crps_from_quantiles(y: f64, quantiles: &[f64], taus: &[f64]) -> Result<f64, NumericsError> {
    if quantiles.len() != taus.len() || taus.is_empty() {
        return Err(NumericsError::LengthMismatch {
            expected: taus.len(),
            found: quantiles.len(),
        });
    }
    validate_taus(taus)?;
    let total: f64 = quantiles
        .iter()
        .zip(taus)
        .map(|(&q, &t)| pinball_unchecked(y, q, t))
        .sum();
    Ok(2.0 * total / taus.len() as f64)
}

/// Quantile levels must be strictly increasing inside (0, 1).
pub fn validate_taus(taus: &[f64]) -> Result<(), NumericsError> {
    for &t in taus {
        check_tau(t)?;
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NumericsError::UnsortedTaus);
    }
    Ok(())
}
