use super::EvalError;

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<(), EvalError> {
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    Ok(())
}

/// `(2/h) Σ |ŷ − y| / (|y| + |ŷ|)`
pub fn smape(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check_lengths(actual, predicted)?;
    let mut total = 0.0;
    for (y, f) in actual.iter().zip(predicted) {
        let denom = y.abs() + f.abs();
        if denom == 0.0 {
            return Err(EvalError::ZeroDenominator);
        }
        total += (f - y).abs() / denom;
    }
    Ok(2.0 * total / actual.len() as f64)
}

/// Mean absolute error scaled by the in-sample seasonal-naive MAE at lag `s`.
pub fn mase(actual: &[f64], predicted: &[f64], insample: &[f64], s: usize) -> Result<f64, EvalError> {
    check_lengths(actual, predicted)?;
    if s == 0 || insample.len() <= s {
        return Err(EvalError::TooShortInsample {
            needed: s + 1,
            available: insample.len(),
        });
    }
    let naive = insample
        .iter()
        .skip(s)
        .zip(insample)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (insample.len() - s) as f64;
    if naive == 0.0 {
        return Err(EvalError::ZeroDenominator);
    }
    let mae = actual
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).abs())
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mae / naive)
}
