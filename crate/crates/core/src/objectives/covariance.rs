use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default ridge added to both auto-covariances.
pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceOptions {
    pub ridge: f64,
    /// Subtract the batch mean before forming second moments. Off by default:
    /// the objectives work on raw second moments `E[f fᵀ]`.
    pub centered: bool,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        Self { ridge: DEFAULT_RIDGE, centered: false }
    }
}

impl CovarianceOptions {
    pub fn uncentered(ridge: f64) -> Self {
        Self { ridge, centered: false }
    }
}

/// Second-moment statistics of a pair of `B × K` embedding batches:
/// `r1 = E1ᵀE1/B + εI`, `r2 = E2ᵀE2/B + εI`, `p12 = E1ᵀE2/B`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStats {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub p12: DMatrix<f64>,
    pub ridge: f64,
    pub batch: usize,
    pub centered: bool,
}

/// Gradient of a scalar objective with respect to `(r1, r2, p12)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceGrad {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub p12: DMatrix<f64>,
}

/// A scalar loss of two embedding batches with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_first: DMatrix<f64>,
    pub grad_second: DMatrix<f64>,
}

pub(crate) fn check_pair(e1: &DMatrix<f64>, e2: &DMatrix<f64>) -> Result<()> {
    if e1.shape() != e2.shape() {
        return Err(Error::Shape(format!("embedding batches {:?} and {:?} differ", e1.shape(), e2.shape())));
    }
    if e1.nrows() == 0 || e1.ncols() == 0 {
        return Err(Error::Shape("empty embedding batch".into()));
    }
    if !linalg::all_finite(e1) || !linalg::all_finite(e2) {
        return Err(Error::NonFinite("embedding batch".into()));
    }
    Ok(())
}

fn center(e: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = e.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn prepared<'a>(e: &'a DMatrix<f64>, centered: bool) -> std::borrow::Cow<'a, DMatrix<f64>> {
    if centered {
        std::borrow::Cow::Owned(center(e))
    } else {
        std::borrow::Cow::Borrowed(e)
    }
}

/// Uncentered batch statistics with ridge `ε` on both auto-covariances.
pub fn batch_covariances(e1: &DMatrix<f64>, e2: &DMatrix<f64>, ridge: f64) -> Result<CovarianceStats> {
    batch_covariances_with(e1, e2, &CovarianceOptions::uncentered(ridge))
}

pub fn batch_covariances_with(
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
    opts: &CovarianceOptions,
) -> Result<CovarianceStats> {
    check_pair(e1, e2)?;
    if !(opts.ridge >= 0.0) {
        return Err(Error::Domain(format!("ridge must be >= 0, got {}", opts.ridge)));
    }
    if e1.nrows() < e1.ncols() {
        log::debug!("batch size {} below embedding width {}; covariances are rank deficient", e1.nrows(), e1.ncols());
    }
    let x = prepared(e1, opts.centered);
    let y = prepared(e2, opts.centered);
    let b = e1.nrows() as f64;
    let k = e1.ncols();
    let ridge_eye = DMatrix::<f64>::identity(k, k) * opts.ridge;
    Ok(CovarianceStats {
        r1: linalg::symmetrize(&(x.tr_mul(&x) / b)) + &ridge_eye,
        r2: linalg::symmetrize(&(y.tr_mul(&y) / b)) + ridge_eye,
        p12: x.tr_mul(&y) / b,
        ridge: opts.ridge,
        batch: e1.nrows(),
        centered: opts.centered,
    })
}

impl CovarianceStats {
    pub fn dim(&self) -> usize {
        self.r1.nrows()
    }

    /// Chain rule from `(r1, r2, p12)` back to the embedding batches the
    /// statistics were computed from.
    pub fn backprop(
        &self,
        e1: &DMatrix<f64>,
        e2: &DMatrix<f64>,
        grad: &CovarianceGrad,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = prepared(e1, self.centered);
        let y = prepared(e2, self.centered);
        let b = self.batch as f64;
        let ga = &grad.r1 + grad.r1.transpose();
        let gb = &grad.r2 + grad.r2.transpose();
        let mut g1 = (&*x * ga + &*y * grad.p12.transpose()) / b;
        let mut g2 = (&*y * gb + &*x * &grad.p12) / b;
        if self.centered {
            g1 = center(&g1);
            g2 = center(&g2);
        }
        (g1, g2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn orthonormal_design() {
        // Columns scaled so that EᵀE/B = I.
        let s = 2f64.sqrt();
        let e = DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, s]);
        let st = batch_covariances(&e, &e, 0.1).unwrap();
        let expect = DMatrix::<f64>::identity(2, 2) * 1.1;
        assert!((&st.r1 - &expect).amax() < 1e-12);
        assert!((&st.r2 - &expect).amax() < 1e-12);
        assert!((&st.p12 - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn zero_second_batch() {
        let e1 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e2 = DMatrix::zeros(3, 2);
        let st = batch_covariances(&e1, &e2, 0.5).unwrap();
        assert_eq!(st.p12, DMatrix::zeros(2, 2));
        assert!((&st.r2 - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn hand_computed_three_by_two() {
        // E1 = [[1,2],[3,4],[5,6]], E2 = [[1,0],[0,1],[1,1]], B = 3.
        let e1 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e2 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let st = batch_covariances(&e1, &e2, 0.0).unwrap();
        // E1ᵀE1 = [[35,44],[44,56]]; E2ᵀE2 = [[2,1],[1,2]]; E1ᵀE2 = [[6,8],[8,10]].
        let r1 = DMatrix::from_row_slice(2, 2, &[35.0, 44.0, 44.0, 56.0]) / 3.0;
        let r2 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        let p = DMatrix::from_row_slice(2, 2, &[6.0, 8.0, 8.0, 10.0]) / 3.0;
        assert!((st.r1 - r1).amax() < 1e-14);
        assert!((st.r2 - r2).amax() < 1e-14);
        assert!((st.p12 - p).amax() < 1e-14);
    }

    #[test]
    fn errors() {
        let a = DMatrix::zeros(3, 2);
        let b = DMatrix::zeros(4, 2);
        assert!(matches!(batch_covariances(&a, &b, 0.0), Err(Error::Shape(_))));
        let mut c = DMatrix::zeros(3, 2);
        c[(0, 0)] = f64::NAN;
        assert!(matches!(batch_covariances(&a, &c, 0.0), Err(Error::NonFinite(_))));
        assert!(batch_covariances(&a, &a, -1.0).is_err());
    }

    #[test]
    fn centering_removes_means() {
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let st = batch_covariances_with(&e1, &e1, &CovarianceOptions { ridge: 0.0, centered: true }).unwrap();
        assert_abs_diff_eq!(st.r1[(0, 0)], 1.0, epsilon = 1e-15);
    }
}
