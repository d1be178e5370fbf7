//! Linear probe: multinomial logistic regression on frozen embeddings.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// L2 penalty on the non-bias weights.
    pub l2: f64,
    pub max_steps: usize,
    pub grad_tolerance: f64,
    /// Fraction of rows held out for evaluation.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l2: 1e-4, max_steps: 5000, grad_tolerance: 1e-6, holdout: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// `C × (D + 1)`; the last column is the bias.
    pub weights: DMatrix<f64>,
    pub feature_mean: DVector<f64>,
    pub feature_scale: DVector<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub steps: usize,
}

impl ProbeResult {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let design = augment(x, &self.feature_mean, &self.feature_scale);
        argmax_rows(&(design * self.weights.transpose()))
    }
}

fn augment(x: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    DMatrix::from_fn(x.nrows(), d + 1, |i, j| if j == d { 1.0 } else { (x[(i, j)] - mean[j]) / scale[j] })
}

fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter().map(|r| r.transpose().argmax().0).collect()
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

/// Deterministic train/held-out split of `0..n`.
pub fn split_indices(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * holdout).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Fits on the training split by full-batch gradient descent with step
/// `1/L`, `L` the smoothness constant of the penalized cross-entropy.
pub fn linear_probe(x: &DMatrix<f64>, labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if !(0.0..1.0).contains(&cfg.holdout) || cfg.l2 < 0.0 {
        return Err(Error::Config("probe holdout must lie in [0, 1) and l2 must be >= 0".into()));
    }
    if !linalg::all_finite(x) {
        return Err(Error::NonFinite("probe features".into()));
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::SingleClass(present.len()));
    }
    let classes = present.last().unwrap() + 1;
    let (train, test) = split_indices(labels.len(), cfg.holdout, cfg.seed);
    let xt = x.select_rows(&train);
    let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let n = xt.nrows() as f64;
    let d = x.ncols();

    let mean = DVector::from_iterator(d, xt.column_iter().map(|c| c.mean()));
    let scale = DVector::from_iterator(
        d,
        xt.column_iter().zip(mean.iter()).map(|(c, m)| {
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        }),
    );
    let design = augment(&xt, &mean, &scale);
    let mut onehot = DMatrix::zeros(train.len(), classes);
    for (i, &y) in yt.iter().enumerate() {
        onehot[(i, y)] = 1.0;
    }

    let gram = design.tr_mul(&design) / n;
    let lipschitz = 0.5 * linalg::sym_eigenvalues_only(&gram)?.first().copied().unwrap_or(1.0) + cfg.l2;
    let step = 1.0 / lipschitz.max(1e-12);
    let mut penalty = DMatrix::from_element(classes, d + 1, cfg.l2);
    penalty.column_mut(d).fill(0.0);

    let mut w = DMatrix::zeros(classes, d + 1);
    let mut steps = 0;
    while steps < cfg.max_steps {
        let mut probs = &design * w.transpose();
        for mut row in probs.row_iter_mut() {
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let s = row.sum();
            row /= s;
        }
        let grad = (probs - &onehot).tr_mul(&design) / n + penalty.component_mul(&w);
        if grad.norm() <= cfg.grad_tolerance {
            break;
        }
        w -= grad * step;
        steps += 1;
    }

    let mut result = ProbeResult {
        weights: w,
        feature_mean: mean,
        feature_scale: scale,
        train_accuracy: 0.0,
        test_accuracy: f64::NAN,
        steps,
    };
    result.train_accuracy = accuracy(&result.predict(&xt), &yt);
    if !test.is_empty() {
        let yh: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        result.test_accuracy = accuracy(&result.predict(&x.select_rows(&test)), &yh);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separated_one_dimensional_classes() {
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { -1.0 - i as f64 * 0.01 } else { 1.0 + i as f64 * 0.01 });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let r = linear_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.train_accuracy, 1.0);
    }

    #[test]
    fn independent_labels_sit_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>());
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let r = linear_probe(&x, &labels, &ProbeConfig { max_steps: 500, ..Default::default() }).unwrap();
        assert!((r.test_accuracy - 0.25).abs() <= 0.05, "{}", r.test_accuracy);
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::zeros(10, 2);
        assert!(matches!(linear_probe(&x, &[1; 10], &ProbeConfig::default()), Err(Error::SingleClass(1))));
        assert!(linear_probe(&x, &[0; 9], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_indices(100, 0.2, 4);
        assert_eq!((a.len(), b.len()), (80, 20));
        let (c, d) = split_indices(100, 0.2, 4);
        assert_eq!((a.clone(), b.clone()), (c, d));
        let mut all = [a, b].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn constant_feature_does_not_break_standardization() {
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                3.0
            } else if i % 3 == 0 {
                5.0
            } else {
                -5.0
            }
        });
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
        let r = linear_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
    }
}
