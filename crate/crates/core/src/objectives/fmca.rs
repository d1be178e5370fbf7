//! Spectral FMCA objectives on batch second moments.
//!
//! With `V = r1^{-1/2} p12 r2^{-1/2}`, the eigenvalues of `V Vᵀ` estimate the
//! density-ratio spectrum `σ_1 ≥ … ≥ σ_K`. The trace objective is
//! `-tr(r1⁻¹ p12 r2⁻¹ p12ᵀ) = -Σσ_i`; the log-det objective is
//! `logdet R − logdet r1 − logdet r2 = Σ ln(1 − σ_i)`. Both are minimized.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::covariance::{batch_covariances_with, CovarianceGrad, CovarianceOptions, CovarianceStats, PairLoss};
use crate::error::{Error, Result};
use crate::linalg;

/// Overshooting eigenvalues are clipped to this.
pub const SIGMA_CEILING: f64 = 1.0 - 1e-9;

/// Descending correlation strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub sigmas: Vec<f64>,
    /// How many values were clipped down to [`SIGMA_CEILING`].
    pub clipped: usize,
}

impl Spectrum {
    pub fn new(mut sigmas: Vec<f64>) -> Self {
        sigmas.sort_by(|a, b| b.total_cmp(a));
        Self { sigmas, clipped: 0 }
    }

    pub fn sum(&self) -> f64 {
        self.sigmas.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.sigmas.first().copied().unwrap_or(0.0)
    }
}

/// `-tr(r1⁻¹ p12 r2⁻¹ p12ᵀ)` and its gradient in `(r1, r2, p12)`.
pub fn trace_objective(stats: &CovarianceStats) -> Result<(f64, CovarianceGrad)> {
    let chol_a = linalg::well_conditioned_cholesky(&stats.r1)?;
    let chol_b = linalg::well_conditioned_cholesky(&stats.r2)?;
    let p = &stats.p12;
    // x = r1⁻¹ p, y = r2⁻¹ pᵀ, m = r1⁻¹ p r2⁻¹
    let x = chol_a.solve(p);
    let y = chol_b.solve(&p.transpose());
    let m = chol_b.solve(&x.transpose()).transpose();
    let loss = -(&x * &y).trace();
    let grad = CovarianceGrad {
        r1: linalg::symmetrize(&(&m * x.transpose())),
        r2: linalg::symmetrize(&(&y * &m)),
        p12: m * -2.0,
    };
    Ok((loss, grad))
}

fn block_matrix(stats: &CovarianceStats) -> DMatrix<f64> {
    let k = stats.dim();
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    j.view_mut((0, 0), (k, k)).copy_from(&stats.r1);
    j.view_mut((k, k), (k, k)).copy_from(&stats.r2);
    j.view_mut((0, k), (k, k)).copy_from(&stats.p12);
    j.view_mut((k, 0), (k, k)).copy_from(&stats.p12.transpose());
    j
}

/// `logdet [[r1, p12], [p12ᵀ, r2]] − logdet r1 − logdet r2` and its gradient.
pub fn logdet_objective(stats: &CovarianceStats) -> Result<(f64, CovarianceGrad)> {
    let k = stats.dim();
    let chol_a = linalg::well_conditioned_cholesky(&stats.r1)?;
    let chol_b = linalg::well_conditioned_cholesky(&stats.r2)?;
    let chol_j = linalg::well_conditioned_cholesky(&block_matrix(stats))?;
    let loss = linalg::logdet(&chol_j) - linalg::logdet(&chol_a) - linalg::logdet(&chol_b);
    let j_inv = chol_j.inverse();
    let grad = CovarianceGrad {
        r1: linalg::symmetrize(&(j_inv.view((0, 0), (k, k)) - chol_a.inverse())),
        r2: linalg::symmetrize(&(j_inv.view((k, k), (k, k)) - chol_b.inverse())),
        p12: j_inv.view((0, k), (k, k)) * 2.0,
    };
    Ok((loss, grad))
}

fn positive_definite(m: &DMatrix<f64>) -> Result<()> {
    let (_, min) = linalg::condition(m)?;
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(())
}

/// Eigenvalues of `V Vᵀ`, `V = r1^{-1/2} p12 r2^{-1/2}`, descending.
pub fn spectrum(stats: &CovarianceStats) -> Result<Spectrum> {
    positive_definite(&stats.r1)?;
    positive_definite(&stats.r2)?;
    let v = linalg::inv_sqrt_psd(&stats.r1)? * &stats.p12 * linalg::inv_sqrt_psd(&stats.r2)?;
    let vvt = linalg::symmetrize(&(&v * v.transpose()));
    let mut clipped = 0;
    let sigmas = linalg::sym_eigenvalues(&vvt)?
        .into_iter()
        .map(|s| {
            if s > SIGMA_CEILING {
                clipped += 1;
                SIGMA_CEILING
            } else {
                s.max(0.0)
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} correlation strength(s) clipped below 1");
    }
    Ok(Spectrum { sigmas, clipped })
}

fn check_sigmas(spec: &Spectrum) -> Result<()> {
    match spec.sigmas.iter().find(|s| !(**s >= 0.0 && **s < 1.0)) {
        Some(&s) => Err(Error::SigmaOutOfRange(s)),
        None => Ok(()),
    }
}

/// `-Σ ln(1 − σ_i)`.
pub fn tsd_log(spec: &Spectrum) -> Result<f64> {
    check_sigmas(spec)?;
    Ok(-spec.sigmas.iter().map(|s| (-s).ln_1p()).sum::<f64>())
}

/// `Σ σ_i`.
pub fn tsd_linear(spec: &Spectrum) -> f64 {
    spec.sum()
}

/// `tsd_log − tsd_linear`, the error of the first-order expansion.
pub fn first_order_gap(spec: &Spectrum) -> Result<f64> {
    Ok(tsd_log(spec)? - tsd_linear(spec))
}

/// Upper bound `Σσ² / (1 − σ_max)` on [`first_order_gap`].
pub fn first_order_gap_bound(spec: &Spectrum) -> f64 {
    spec.sigmas.iter().map(|s| s * s).sum::<f64>() / (1.0 - spec.max())
}

/// Which spectral objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralObjective {
    Trace,
    LogDet,
}

/// Covariances, objective, and backprop to the embedding batches.
pub fn spectral_loss(
    objective: SpectralObjective,
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
    opts: &CovarianceOptions,
) -> Result<PairLoss> {
    let stats = batch_covariances_with(e1, e2, opts)?;
    let (loss, grad) = match objective {
        SpectralObjective::Trace => trace_objective(&stats)?,
        SpectralObjective::LogDet => logdet_objective(&stats)?,
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("spectral loss".into()));
    }
    let (grad_first, grad_second) = stats.backprop(e1, e2, &grad);
    Ok(PairLoss { loss, grad_first, grad_second })
}

pub fn trace_loss(e1: &DMatrix<f64>, e2: &DMatrix<f64>, opts: &CovarianceOptions) -> Result<PairLoss> {
    spectral_loss(SpectralObjective::Trace, e1, e2, opts)
}

pub fn logdet_loss(e1: &DMatrix<f64>, e2: &DMatrix<f64>, opts: &CovarianceOptions) -> Result<PairLoss> {
    spectral_loss(SpectralObjective::LogDet, e1, e2, opts)
}
