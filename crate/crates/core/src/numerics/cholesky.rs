use super::{Matrix, NumericsError};

const MAX_JITTER_STEPS: usize = 8;

/// Lower-triangular factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFactor {
    pub lower: Matrix,
    pub jitter: f64,
    /// Whether negative eigenvalues had to be clipped before factorising.
    pub clipped: bool,
}

/// Cholesky factor of a symmetric matrix that may be indefinite.
///
/// The matrix is factorised as is when possible (semi-definite pivots allowed).
/// Otherwise negative eigenvalues are clipped to zero and the smallest jitter
/// `jitter_start · 10^k` (`k < 8`) that lets the factorisation succeed is added.
pub fn cholesky_psd(cov: &Matrix, jitter_start: f64) -> Result<PsdFactor, NumericsError> {
    if !cov.is_square() {
        return Err(NumericsError::NotSquare {
            rows: cov.rows(),
            cols: cov.cols(),
        });
    }
    let n = cov.rows();
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                return Err(NumericsError::NotSymmetric { row: i, col: j });
            }
        }
    }
    if let Some(lower) = cholesky_semidefinite(cov) {
        return Ok(PsdFactor {
            lower,
            jitter: 0.0,
            clipped: false,
        });
    }
    let clipped = clip_eigenvalues(cov);
    if let Some(lower) = cholesky_semidefinite(&clipped) {
        return Ok(PsdFactor {
            lower,
            jitter: 0.0,
            clipped: true,
        });
    }
    let mut jitter = jitter_start.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_JITTER_STEPS {
        let mut shifted = clipped.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(lower) = cholesky_semidefinite(&shifted) {
            return Ok(PsdFactor {
                lower,
                jitter,
                clipped: true,
            });
        }
        jitter *= 10.0;
    }
    Err(NumericsError::FactorizationFailed)
}

/// The symmetric matrix with negative eigenvalues set to zero.
pub fn clip_eigenvalues(cov: &Matrix) -> Matrix {
    let eig = nalgebra::SymmetricEigen::new(cov.to_nalgebra());
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt =
        &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
    Matrix::from_nalgebra(&sym)
}

/// Cholesky that tolerates zero pivots (positive semi-definite input).
fn cholesky_semidefinite(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs())).max(1.0);
    let tol = 1e-12 * scale * n as f64;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return None;
        }
        let pivot = if d > tol { d.sqrt() } else { 0.0 };
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if pivot > 0.0 {
                l[(i, j)] = s / pivot;
            } else if s.abs() > tol.sqrt() {
                return None;
            }
        }
    }
    // zero pivots can hide a bad factorisation; verify the reconstruction
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..=j {
                s += l[(i, k)] * l[(j, k)];
            }
            if (s - a[(i, j)]).abs() > 1e-9 * scale {
                return None;
            }
        }
    }
    Some(l)
}

/// Strict Cholesky for positive-definite systems.
pub(crate) fn cholesky_strict(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-13 * scale || !d.is_finite() {
            return None;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

/// Solve `L Lᵀ x = b` in place.
pub(crate) fn cholesky_solve(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower_times_transpose(l: &Matrix) -> Matrix {
        l.matmul(&l.transpose()).unwrap()
    }

    #[test]
    fn identity_is_its_own_factor() {
        let f = cholesky_psd(&Matrix::identity(3), 1e-10).unwrap();
        assert_eq!(f.lower, Matrix::identity(3));
        assert_eq!(f.jitter, 0.0);
    }

    #[test]
    fn rank_one_factor() {
        let a = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let f = cholesky_psd(&a, 1e-10).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!(f.lower.max_abs_diff(&Matrix::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap()) < 1e-15);
    }

    #[test]
    fn indefinite_matrix_is_repaired() {
        // eigenvalues 3 and -1
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let f = cholesky_psd(&a, 1e-10).unwrap();
        assert!(f.clipped);
        let rebuilt = lower_times_transpose(&f.lower);
        let expected = Matrix::new(2, 2, vec![1.5, 1.5, 1.5, 1.5]).unwrap();
        assert!(rebuilt.max_abs_diff(&expected) < 1e-8 + f.jitter);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            cholesky_psd(&Matrix::zeros(2, 3), 1e-10),
            Err(NumericsError::NotSquare { .. })
        ));
        let a = Matrix::new(2, 2, vec![1.0, 0.5, 0.4, 1.0]).unwrap();
        assert!(matches!(
            cholesky_psd(&a, 1e-10),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn solve_matches_direct() {
        let a = Matrix::new(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let l = cholesky_strict(&a).unwrap();
        let mut x = vec![1.0, 2.0, 3.0];
        cholesky_solve(&l, &mut x);
        let back = a.matvec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
    }
}
