//! InfoNCE and its CLIP-style symmetrizations with cosine similarity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::covariance::{check_pair, PairLoss};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Rows are divided by `max(|x|, norm_floor)`. With the default of 0 a
    /// zero-norm row is an error.
    #[serde(default)]
    pub norm_floor: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.1, norm_floor: 0.0 }
    }
}

impl ContrastiveConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Domain(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(Self { temperature, norm_floor: 0.0 })
    }

    pub fn with_norm_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::Domain(format!("norm floor must be >= 0, got {floor}")));
        }
        self.norm_floor = floor;
        Ok(self)
    }
}

/// Row-normalized copy of `e` and the divisor used for each row.
fn normalize_rows(e: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = e.clone();
    let mut norms = Vec::with_capacity(e.nrows());
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm().max(floor);
        if !(n > 0.0) {
            return Err(Error::Domain(format!("embedding row {i} has zero norm")));
        }
        row /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// Backward through `u = x / max(|x|, floor)` row by row.
fn normalize_backward(unit: &DMatrix<f64>, norms: &[f64], grad_unit: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut g = grad_unit.clone();
    for (i, mut row) in g.row_iter_mut().enumerate() {
        // Below the floor the map is linear, so there is no projection term.
        if norms[i] > floor {
            let u = unit.row(i);
            let dot = row.dot(&u);
            row -= u * dot;
        }
        row /= norms[i];
    }
    g
}

/// InfoNCE over a precomputed logit matrix `s` (`s[i][j] = sim_ij / τ`):
/// mean over rows of `logsumexp_j s_ij − s_ii`. Returns the loss and `∂loss/∂s`.
pub fn infonce_from_logits(s: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let b = s.nrows();
    let bf = b as f64;
    let mut grad = DMatrix::zeros(b, b);
    let mut loss = 0.0;
    for i in 0..b {
        let row = s.row(i);
        let max = row.max();
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - s[(i, i)];
        for j in 0..b {
            grad[(i, j)] = (s[(i, j)] - lse).exp() / bf;
        }
        grad[(i, i)] -= 1.0 / bf;
    }
    (loss / bf, grad)
}

/// `x → y` InfoNCE: each row of `e1` is an anchor whose positive is the same
/// row of `e2`, with every row of `e2` as a candidate.
pub fn infonce_loss(e1: &DMatrix<f64>, e2: &DMatrix<f64>, cfg: &ContrastiveConfig) -> Result<PairLoss> {
    check_pair(e1, e2)?;
    ContrastiveConfig::new(cfg.temperature)?.with_norm_floor(cfg.norm_floor)?;
    let (z, nz) = normalize_rows(e1, cfg.norm_floor)?;
    let (w, nw) = normalize_rows(e2, cfg.norm_floor)?;
    let tau = cfg.temperature;
    let logits = &z * w.transpose() / tau;
    let (loss, gs) = infonce_from_logits(&logits);
    let gz = &gs * &w / tau;
    let gw = gs.transpose() * &z / tau;
    Ok(PairLoss {
        loss,
        grad_first: normalize_backward(&z, &nz, &gz, cfg.norm_floor),
        grad_second: normalize_backward(&w, &nw, &gw, cfg.norm_floor),
    })
}

/// `ln B − loss`, the InfoNCE mutual-information estimate. Never above `ln B`.
pub fn infonce_mi_estimate(loss: f64, batch: usize) -> f64 {
    (batch as f64).ln() - loss
}

/// Mean of both InfoNCE directions.
pub fn clip_loss(e1: &DMatrix<f64>, e2: &DMatrix<f64>, cfg: &ContrastiveConfig) -> Result<PairLoss> {
    let fwd = infonce_loss(e1, e2, cfg)?;
    let bwd = infonce_loss(e2, e1, cfg)?;
    Ok(PairLoss {
        loss: 0.5 * (fwd.loss + bwd.loss),
        grad_first: (fwd.grad_first + bwd.grad_second) * 0.5,
        grad_second: (fwd.grad_second + bwd.grad_first) * 0.5,
    })
}

/// Sum of the three pairwise CLIP losses.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleLoss {
    pub loss: f64,
    pub grads: [DMatrix<f64>; 3],
}

pub fn clip_pp_loss(
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
    e3: &DMatrix<f64>,
    cfg: &ContrastiveConfig,
) -> Result<TripleLoss> {
    let l12 = clip_loss(e1, e2, cfg)?;
    let l23 = clip_loss(e2, e3, cfg)?;
    let l13 = clip_loss(e1, e3, cfg)?;
    Ok(TripleLoss {
        loss: l12.loss + l23.loss + l13.loss,
        grads: [l12.grad_first + l13.grad_first, l12.grad_second + l23.grad_first, l23.grad_second + l13.grad_second],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_logits_give_log_b() {
        let (l, _) = infonce_from_logits(&DMatrix::from_element(8, 8, 0.3));
        assert_abs_diff_eq!(l, 8f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(l, 2.079_441_541_679_835_9, epsilon = 1e-14);
    }

    #[test]
    fn two_by_two_identity_similarity() {
        let e = DMatrix::<f64>::identity(2, 2);
        let l = infonce_loss(&e, &e, &ContrastiveConfig::new(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(l.loss, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(l.loss, 0.313_261_687_518_222_8, epsilon = 1e-14);
    }

    #[test]
    fn dominant_diagonal_low_temperature() {
        let e = DMatrix::<f64>::identity(4, 4);
        let l = infonce_loss(&e, &e, &ContrastiveConfig::new(0.01).unwrap()).unwrap();
        assert!(l.loss < 1e-40);
    }

    #[test]
    fn symmetric_similarity_clip_equals_infonce() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 1.0, 0.5, 0.5]);
        let cfg = ContrastiveConfig::default();
        let a = infonce_loss(&e, &e, &cfg).unwrap();
        let c = clip_loss(&e, &e, &cfg).unwrap();
        assert_abs_diff_eq!(a.loss, c.loss, epsilon = 1e-14);
    }

    #[test]
    fn clip_pp_uniform() {
        // Every row identical: all cosine similarities equal.
        let e = DMatrix::from_element(8, 3, 1.0);
        let l = clip_pp_loss(&e, &e, &e, &ContrastiveConfig::default()).unwrap();
        assert_abs_diff_eq!(l.loss, 6.238_324_625_039_508, epsilon = 1e-12);
    }

    #[test]
    fn zero_row_rejected() {
        let mut e = DMatrix::from_element(3, 2, 1.0);
        e[(1, 0)] = 0.0;
        e[(1, 1)] = 0.0;
        let f = DMatrix::from_element(3, 2, 1.0);
        assert!(infonce_loss(&e, &f, &ContrastiveConfig::default()).is_err());
        assert!(ContrastiveConfig::new(0.0).is_err());
        let floored = ContrastiveConfig::default().with_norm_floor(1e-12).unwrap();
        let l = infonce_loss(&e, &f, &floored).unwrap();
        assert!(l.loss.is_finite());
        assert!(l.grad_first.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn estimate_never_exceeds_log_b() {
        let e = DMatrix::<f64>::identity(5, 5);
        let l = infonce_loss(&e, &e, &ContrastiveConfig::new(0.05).unwrap()).unwrap();
        let est = infonce_mi_estimate(l.loss, 5);
        assert!(est <= 5f64.ln());
        assert!(est > 5f64.ln() - 1e-6);
    }
}
