use super::cholesky::{cholesky_solve, cholesky_strict};
use super::{Matrix, NumericsError};

/// `argmin ‖y − Xβ‖² + λ‖β‖²` via the normal equations `(XᵀX + λI)β = Xᵀy`.
pub fn ridge_solve(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>, NumericsError> {
    let system = RidgeSystem::new(x, lambda)?;
    system.solve(x, y)
}

/// Factorised `XᵀX + λI`, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    lower: Matrix,
}

impl RidgeSystem {
    pub fn new(x: &Matrix, lambda: f64) -> Result<Self, NumericsError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(NumericsError::BadArgument(format!("ridge penalty {lambda}")));
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(NumericsError::Shape("empty design matrix".into()));
        }
        let mut normal = x.gram();
        for i in 0..normal.rows() {
            normal[(i, i)] += lambda;
        }
        let lower = cholesky_strict(&normal).ok_or(NumericsError::Singular)?;
        Ok(Self { lower })
    }

    pub fn solve(&self, x: &Matrix, y: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if y.len() != x.rows() {
            return Err(NumericsError::Shape(format!(
                "response length {} does not match {} rows",
                y.len(),
                x.rows()
            )));
        }
        let mut beta = x.t_matvec(y);
        cholesky_solve(&self.lower, &mut beta);
        Ok(beta)
    }

    /// Solve against a precomputed `Xᵀy`.
    pub fn solve_normal(&self, xty: &[f64]) -> Vec<f64> {
        let mut beta = xty.to_vec();
        cholesky_solve(&self.lower, &mut beta);
        beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm2;

    #[test]
    fn identity_design_shrinks() {
        let beta = ridge_solve(&Matrix::identity(2), &[2.0, 4.0], 1.0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-15 && (beta[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn huge_penalty_vanishes() {
        let x = Matrix::from_fn(6, 3, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0 + 0.5);
        let y = [1.0, -2.0, 3.0, 0.5, 4.0, -1.0];
        let beta = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(norm2(&beta) < 1e-9 * norm2(&y));
    }

    #[test]
    fn wide_design_with_penalty() {
        // p > n is fine when λ > 0
        let x = Matrix::from_fn(3, 8, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let y = [1.0, 2.0, 3.0];
        let lambda = 0.3;
        let beta = ridge_solve(&x, &y, lambda).unwrap();
        let r: Vec<f64> = x.matvec(&beta).iter().zip(&y).map(|(a, b)| a - b).collect();
        let g: Vec<f64> = x
            .t_matvec(&r)
            .iter()
            .zip(&beta)
            .map(|(a, b)| a + lambda * b)
            .collect();
        assert!(norm2(&g) < 1e-8 * norm2(&y));
    }

    #[test]
    fn rank_deficient_without_penalty() {
        let x = Matrix::from_fn(4, 2, |i, _| i as f64);
        assert_eq!(
            ridge_solve(&x, &[1.0, 2.0, 3.0, 4.0], 0.0),
            Err(NumericsError::Singular)
        );
    }
}
