//! Small dense helpers on top of nalgebra shared by the estimators and objectives.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalue floor used when forming inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = m.clone().try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::Eigen)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Eigenvalues only, sorted descending. Skips the eigenvector accumulation,
/// which dominates the cost for the N×N Gram matrices.
pub fn sym_eigenvalues_only(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// `(condition, smallest eigenvalue)` of a symmetric matrix. The condition is
/// infinite when the smallest eigenvalue is not positive.
pub fn condition(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let values = sym_eigenvalues(m)?;
    let max = values[0];
    let min = *values.last().unwrap();
    let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
    Ok((cond, min))
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(m.clone()) {
        Some(c) if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) => Ok(c),
        _ => {
            let min_eigenvalue = sym_eigenvalues(m).map(|v| *v.last().unwrap()).unwrap_or(f64::NAN);
            Err(Error::NotPositiveDefinite { min_eigenvalue })
        }
    }
}

/// Cholesky factor after checking the conditioning of `m`.
pub fn well_conditioned_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let (cond, min) = condition(m)?;
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularCovariance { condition: cond });
    }
    cholesky(m)
}

pub fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetric inverse square root with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn inv_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::Eigen)?;
    let scaled = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&scaled) * q.transpose())
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_descend() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let v = sym_eigenvalues(&m).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = inv_sqrt_psd(&m).unwrap();
        let prod = &s * &m * &s;
        assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_reports_smallest_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            well_conditioned_cholesky(&m),
            Err(Error::NotPositiveDefinite { .. }) | Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = cholesky(&m).unwrap();
        assert!((logdet(&c) - (2.0f64 - 0.25).ln()).abs() < 1e-12);
    }
}
