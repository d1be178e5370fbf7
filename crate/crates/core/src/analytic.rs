//! Closed-form dependence quantities for equicorrelated Gaussians.
//!
//! Everything here is in nats. The three-variable quantities are written in
//! terms of `a = ln(1 - rho²)` (log-determinant of any 2×2 marginal) and
//! `b = ln(1 + 2rho³ - 3rho²)` (log-determinant of the 3×3 covariance):
//!
//! | quantity            | closed form          |
//! |---------------------|----------------------|
//! | `DTC(X1,X2,X3)`     | `1.5a - b`           |
//! | `I(Xi,Xj; Xk)`      | `0.5a - 0.5b`        |
//! | `I(Xi; Xj | Xk)`    | `0.5(2a - b)`        |
//! | `I(Xi; Xj)`         | `-0.5a`              |
//!
//! The identity checks at the bottom recompute the same quantities from
//! generic log-det entropies so that the closed forms are never checked
//! against themselves.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Zero-mean Gaussian with unit variances and a common correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquicorrelatedGaussian {
    rho: f64,
    m: usize,
}

impl EquicorrelatedGaussian {
    /// Rejects `rho` on or outside `(-1/(m-1), 1)`, where the covariance stops
    /// being positive definite.
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Domain(format!("need at least 2 variables, got {m}")));
        }
        let lower = -1.0 / (m as f64 - 1.0);
        if !(rho > lower && rho < 1.0) {
            return Err(Error::Domain(format!("rho = {rho} outside ({lower}, 1) for m = {m}")));
        }
        Ok(Self { rho, m })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| if i == j { 1.0 } else { self.rho })
    }

    /// `det Σ = (1 - rho)^(m-1) (1 + (m-1) rho)`.
    pub fn determinant(&self) -> f64 {
        let m = self.m as f64;
        (1.0 - self.rho).powf(m - 1.0) * (1.0 + (m - 1.0) * self.rho)
    }
}

/// Lower and upper sandwich bounds on DTC, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn strictly_contains(&self, value: f64) -> bool {
        self.lower < value && value < self.upper
    }
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * LN_2
}

/// `(ln(1 - rho²), ln det Σ)` for the three-variable equicorrelated case.
fn log_dets3(rho: f64) -> Result<(f64, f64)> {
    let det3 = 1.0 + 2.0 * rho.powi(3) - 3.0 * rho * rho;
    if !(rho > -0.5 && rho < 1.0) || det3 <= 0.0 {
        return Err(Error::Domain(format!("rho = {rho} outside (-0.5, 1); det = {det3}")));
    }
    Ok(((1.0 - rho * rho).ln(), det3.ln()))
}

/// DTC of three equicorrelated standard Gaussians.
pub fn gaussian_dtc3(rho: f64) -> Result<f64> {
    let (a, b) = log_dets3(rho)?;
    Ok(1.5 * a - b)
}

/// `I(Xi, Xj; Xk)` for three equicorrelated standard Gaussians.
pub fn gaussian_pair_third_mi3(rho: f64) -> Result<f64> {
    let (a, b) = log_dets3(rho)?;
    Ok(0.5 * a - 0.5 * b)
}

/// `I(Xi; Xj | Xk)` for three equicorrelated standard Gaussians.
pub fn gaussian_conditional_mi3(rho: f64) -> Result<f64> {
    let (a, b) = log_dets3(rho)?;
    Ok(0.5 * (2.0 * a - b))
}

/// Mutual information of a bivariate standard Gaussian with correlation `rho`.
pub fn gaussian_pairwise_mi(rho: f64) -> Result<f64> {
    gaussian_mi_multidim(1, rho)
}

/// Mutual information between `X, Y ∈ R^d` whose coordinate pairs are
/// independent with correlation `rho` each: `-(d/2) ln(1 - rho²)`.
pub fn gaussian_mi_multidim(d: usize, rho: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("|rho| = {} must be < 1", rho.abs())));
    }
    Ok(-(d as f64) / 2.0 * (1.0 - rho * rho).ln())
}

/// Sandwich bounds `(1/M) Σ t` and `((M-1)/M) Σ t` from the `M` joint
/// mutual-information terms `I(X_rest; X_i)`.
pub fn sandwich_bounds(joint_mi_terms: &[f64]) -> Result<BoundPair> {
    let m = joint_mi_terms.len();
    if m < 3 {
        return Err(Error::Domain(format!("need M >= 3 terms, got {m}")));
    }
    if let Some(t) = joint_mi_terms.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN term {t}")));
    }
    let sum: f64 = joint_mi_terms.iter().sum();
    let m = m as f64;
    Ok(BoundPair { lower: sum / m, upper: (m - 1.0) / m * sum })
}

/// `|DTC - [ (1/3)·ΣI(Xi;Xj) + (2/3)·ΣI(Xi;Xj|Xk) ]|` for the equicorrelated case.
pub fn dtc_decomposition_residual(rho: f64) -> Result<f64> {
    let dtc = gaussian_dtc3(rho)?;
    let pair = gaussian_pairwise_mi(rho)?;
    let cond = gaussian_conditional_mi3(rho)?;
    Ok((dtc - (3.0 * pair / 3.0 + 2.0 * 3.0 * cond / 3.0)).abs())
}

/// Differential entropy (nats) of the Gaussian marginal on `indices`.
pub fn gaussian_entropy(cov: &DMatrix<f64>, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let n = cov.nrows();
    if let Some(&i) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!("index {i} out of range for {n} variables")));
    }
    let sub = DMatrix::from_fn(indices.len(), indices.len(), |r, c| cov[(indices[r], indices[c])]);
    let chol = linalg::cholesky(&sub)?;
    let d = indices.len() as f64;
    Ok(0.5 * (d * (2.0 * PI * std::f64::consts::E).ln() + linalg::logdet(&chol)))
}

/// `I(X_A; X_B | X_C)` from four log-det entropies.
pub fn gaussian_conditional_mi(cov: &DMatrix<f64>, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
    let join = |x: &[usize], y: &[usize]| -> Vec<usize> { x.iter().chain(y).copied().collect() };
    let ac = join(a, c);
    let bc = join(b, c);
    let abc = join(&ac, b);
    Ok(gaussian_entropy(cov, &ac)? + gaussian_entropy(cov, &bc)?
        - gaussian_entropy(cov, c)?
        - gaussian_entropy(cov, &abc)?)
}

/// DTC of an arbitrary Gaussian from log-det entropies:
/// `H(X) - Σ_i H(X_i | X_rest)`.
pub fn gaussian_dtc(cov: &DMatrix<f64>) -> Result<f64> {
    let m = cov.nrows();
    let all: Vec<usize> = (0..m).collect();
    let h_all = gaussian_entropy(cov, &all)?;
    let mut dtc = h_all;
    for i in 0..m {
        let rest: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
        dtc -= h_all - gaussian_entropy(cov, &rest)?;
    }
    Ok(dtc)
}

/// TC of an arbitrary Gaussian: `-0.5 ln det` of its correlation matrix when
/// variances are unit.
pub fn gaussian_tc(cov: &DMatrix<f64>) -> Result<f64> {
    let m = cov.nrows();
    let all: Vec<usize> = (0..m).collect();
    let mut tc = -gaussian_entropy(cov, &all)?;
    for i in 0..m {
        tc += gaussian_entropy(cov, &[i])?;
    }
    Ok(tc)
}

/// `I(X_rest; X_i)` for every `i`, from log-det entropies.
pub fn gaussian_rest_mi_terms(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = cov.nrows();
    (0..m)
        .map(|i| {
            let rest: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            gaussian_conditional_mi(cov, &rest, &[i], &[])
        })
        .collect()
}

/// Residual of the chain rule `I(X1,X2; X3) = I(X1; X3) + I(X2; X3 | X1)`
/// with the left side in closed form and the right side from log-det entropies.
pub fn chain_rule_residual(rho: f64) -> Result<f64> {
    let cov = EquicorrelatedGaussian::new(3, rho)?.covariance();
    let lhs = gaussian_pair_third_mi3(rho)?;
    let rhs = gaussian_conditional_mi(&cov, &[0], &[2], &[])? + gaussian_conditional_mi(&cov, &[1], &[2], &[0])?;
    Ok((lhs - rhs).abs())
}

/// Residual of `TC + DTC = Σ_i I(X_i; X_rest)` for three equicorrelated
/// Gaussians, with `TC = -0.5 ln det Σ` and DTC in closed form.
pub fn tc_dtc_sum_residual(rho: f64) -> Result<f64> {
    let g = EquicorrelatedGaussian::new(3, rho)?;
    let tc = -0.5 * g.determinant().ln();
    let dtc = gaussian_dtc3(rho)?;
    let sum: f64 = gaussian_rest_mi_terms(&g.covariance())?.iter().sum();
    Ok((tc + dtc - sum).abs())
}

/// The rho grid used for the bound tables: `0, 0.05, …, 0.95`.
pub fn default_rho_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Frozen from a 30-digit mpmath evaluation of the closed forms.
    const DTC_05: f64 = 0.261_624_071_882_273_9;
    const DTC_09: f64 = 1.084_453_958_574_456_8;
    const PT_05: f64 = 0.202_732_554_054_082_2;
    const PT_09: f64 = 0.957_409_780_992_641_1;
    const COND_05: f64 = 0.058_891_517_828_191_73;
    const COND_09: f64 = 0.127_044_177_581_815_66;
    const PAIR_05: f64 = 0.143_841_036_225_890_46;
    const PAIR_09: f64 = 0.830_365_603_410_825_5;

    #[test]
    fn dtc3_values() {
        assert_eq!(gaussian_dtc3(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_dtc3(0.5).unwrap(), DTC_05, epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_dtc3(0.9).unwrap(), DTC_09, epsilon = 1e-13);
    }

    #[test]
    fn pair_third_values() {
        assert_eq!(gaussian_pair_third_mi3(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_pair_third_mi3(0.5).unwrap(), PT_05, epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_pair_third_mi3(0.9).unwrap(), PT_09, epsilon = 1e-13);
    }

    #[test]
    fn conditional_values() {
        assert_eq!(gaussian_conditional_mi3(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_conditional_mi3(0.5).unwrap(), COND_05, epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_conditional_mi3(0.9).unwrap(), COND_09, epsilon = 1e-13);
    }

    #[test]
    fn pairwise_and_multidim_values() {
        assert_eq!(gaussian_pairwise_mi(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_pairwise_mi(0.5).unwrap(), PAIR_05, epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_pairwise_mi(0.9).unwrap(), PAIR_09, epsilon = 1e-13);
        assert_eq!(gaussian_mi_multidim(20, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_mi_multidim(20, 0.5).unwrap(), 2.876_820_724_517_809, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_mi_multidim(2, 0.9).unwrap(), 1.660_731_206_821_651, epsilon = 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(gaussian_dtc3(-0.5).is_err());
        assert!(gaussian_dtc3(1.0).is_err());
        assert!(gaussian_pair_third_mi3(f64::NAN).is_err());
        assert!(gaussian_pairwise_mi(1.0).is_err());
        assert!(gaussian_mi_multidim(0, 0.1).is_err());
        assert!(EquicorrelatedGaussian::new(4, -1.0 / 3.0).is_err());
        assert!(EquicorrelatedGaussian::new(1, 0.0).is_err());
    }

    #[test]
    fn sandwich_examples() {
        assert_eq!(sandwich_bounds(&[0.0; 3]).unwrap(), BoundPair { lower: 0.0, upper: 0.0 });
        let b = sandwich_bounds(&[PT_05; 3]).unwrap();
        assert_abs_diff_eq!(b.lower, PT_05, epsilon = 1e-15);
        assert_abs_diff_eq!(b.upper, 2.0 * PT_05, epsilon = 1e-15);
        assert!(b.strictly_contains(DTC_05));
        let t = 0.37;
        let b4 = sandwich_bounds(&[t; 4]).unwrap();
        assert_abs_diff_eq!(b4.lower, t, epsilon = 1e-15);
        assert_abs_diff_eq!(b4.upper, 3.0 * t, epsilon = 1e-15);
        assert!(sandwich_bounds(&[0.1, 0.2]).is_err());
        assert!(sandwich_bounds(&[0.1, -0.2, 0.3]).is_err());
    }

    #[test]
    fn closed_forms_match_log_det_entropies() {
        for rho in [-0.4, -0.2, 0.1, 0.5, 0.9] {
            let cov = EquicorrelatedGaussian::new(3, rho).unwrap().covariance();
            assert_abs_diff_eq!(gaussian_dtc(&cov).unwrap(), gaussian_dtc3(rho).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(
                gaussian_conditional_mi(&cov, &[0], &[1], &[2]).unwrap(),
                gaussian_conditional_mi3(rho).unwrap(),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                gaussian_tc(&cov).unwrap(),
                -0.5 * (1.0 + 2.0 * rho.powi(3) - 3.0 * rho * rho).ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn identities_hold_on_grid() {
        let grid = [-0.4, -0.2, 0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.95];
        for rho in grid {
            assert!(dtc_decomposition_residual(rho).unwrap() <= 1e-12);
            assert!(chain_rule_residual(rho).unwrap() <= 1e-12, "chain rule at {rho}");
            assert!(tc_dtc_sum_residual(rho).unwrap() <= 1e-12, "tc+dtc at {rho}");
            let b = sandwich_bounds(&[gaussian_pair_third_mi3(rho).unwrap(); 3]).unwrap();
            let dtc = gaussian_dtc3(rho).unwrap();
            if rho == 0.0 {
                assert!(b.contains(dtc));
            } else {
                assert!(b.strictly_contains(dtc), "rho = {rho}");
            }
        }
    }

    #[test]
    fn dtc_increases_on_unit_interval() {
        let mut prev = gaussian_dtc3(0.0).unwrap();
        for i in 1..100 {
            let v = gaussian_dtc3(i as f64 * 0.0099).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn determinant_closed_form() {
        let g = EquicorrelatedGaussian::new(3, 0.3).unwrap();
        assert_abs_diff_eq!(g.determinant(), 1.0 + 2.0 * 0.027 - 3.0 * 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(g.covariance().determinant(), g.determinant(), epsilon = 1e-14);
    }

    #[test]
    fn bits_round_trip() {
        assert_abs_diff_eq!(nats_to_bits(LN_2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bits_to_nats(nats_to_bits(0.7)), 0.7, epsilon = 1e-15);
    }
}
