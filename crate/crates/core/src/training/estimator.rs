//! Two-encoder dependence estimation on paired Gaussians: FMCA (trace
//! objective, reported as the linear total dependence `Σσ`) against InfoNCE
//! (reported as `ln B − loss`).

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_mlp, AdamState};
use super::manifest::{IterationRecord, RunManifest};
use super::TrainConfig;
use crate::data::sample_gaussian_pairs;
use crate::encoders::{backward, forward, init_params, MlpParams, MlpSpec, Mode};
use crate::error::{Error, Result};
use crate::objectives::{
    batch_covariances_with, infonce_loss, infonce_mi_estimate, spectral_loss, spectrum, ContrastiveConfig,
    CovarianceOptions, PairLoss, SpectralObjective, Spectrum, TRAINING_NORM_FLOOR,
};

const INIT_STREAM: u64 = 20;
const BATCH_STREAM: u64 = 21;
const EVAL_STREAM: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    FmcaTrace,
    Infonce,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::FmcaTrace => "fmca-trace",
            EstimatorKind::Infonce => "infonce",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct EstimatorRun<'a> {
    dims: usize,
    rho: f64,
    kind: EstimatorKind,
    eval_samples: usize,
    train: &'a TrainConfig,
}

pub struct EstimatorOutcome {
    /// `(iteration, estimate)` at every evaluation point.
    pub trajectory: Vec<(usize, f64)>,
    /// Mean estimate over the last 10% of iterations.
    pub final_estimate: f64,
    /// FMCA spectrum on the evaluation set after the last step.
    pub final_spectrum: Option<Spectrum>,
    pub encoders: [MlpParams; 2],
    pub manifest: RunManifest,
}

fn covariance_options(cfg: &TrainConfig) -> CovarianceOptions {
    CovarianceOptions { ridge: cfg.ridge, centered: cfg.centered }
}

fn contrastive_config(cfg: &TrainConfig) -> Result<ContrastiveConfig> {
    ContrastiveConfig::new(cfg.temperature)?.with_norm_floor(TRAINING_NORM_FLOOR)
}

fn pair_loss(kind: EstimatorKind, e1: &DMatrix<f64>, e2: &DMatrix<f64>, cfg: &TrainConfig) -> Result<PairLoss> {
    match kind {
        EstimatorKind::FmcaTrace => spectral_loss(SpectralObjective::Trace, e1, e2, &covariance_options(cfg)),
        EstimatorKind::Infonce => infonce_loss(e1, e2, &contrastive_config(cfg)?),
    }
}

fn embed(encoders: &[MlpParams; 2], x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((forward(&encoders[0], x, Mode::Eval)?.0, forward(&encoders[1], y, Mode::Eval)?.0))
}

/// FMCA: `Σσ` of the evaluation-set spectrum. InfoNCE: `ln B` minus the mean
/// loss over consecutive size-`B` chunks of the evaluation set.
fn evaluate(
    kind: EstimatorKind,
    encoders: &[MlpParams; 2],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(f64, Option<Spectrum>)> {
    let (ex, ey) = embed(encoders, x, y)?;
    match kind {
        EstimatorKind::FmcaTrace => {
            let spec = spectrum(&batch_covariances_with(&ex, &ey, &covariance_options(cfg))?)?;
            Ok((spec.sum(), Some(spec)))
        }
        EstimatorKind::Infonce => {
            let b = cfg.batch_size;
            let chunks = ex.nrows() / b;
            if chunks == 0 {
                return Err(Error::Config("evaluation set smaller than one batch".into()));
            }
            let tcfg = contrastive_config(cfg)?;
            let mut total = 0.0;
            for c in 0..chunks {
                let l = infonce_loss(&ex.rows(c * b, b).clone_owned(), &ey.rows(c * b, b).clone_owned(), &tcfg)?;
                total += l.loss;
            }
            Ok((infonce_mi_estimate(total / chunks as f64, b), None))
        }
    }
}

/// Trains two encoders on fresh `sample_gaussian_pairs(d, rho, B)` batches.
pub fn train_bimodal_estimator(
    d: usize,
    rho: f64,
    kind: EstimatorKind,
    cfg: &TrainConfig,
    eval_samples: usize,
) -> Result<EstimatorOutcome> {
    cfg.validate()?;
    let run = EstimatorRun { dims: d, rho, kind, eval_samples, train: cfg };
    let mut manifest = RunManifest::new(&run, cfg.seed)?;

    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    seeds.set_stream(INIT_STREAM);
    let spec = MlpSpec::all_batch_norm(vec![d, cfg.hidden, cfg.embed_dim], cfg.batch_norm)?;
    let mut encoders = [init_params(&spec, seeds.next_u64()), init_params(&spec, seeds.next_u64())];
    let mut states = [AdamState::for_mlp(&mut encoders[0]), AdamState::for_mlp(&mut encoders[1])];

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(EVAL_STREAM);
    let (eval_x, eval_y) = sample_gaussian_pairs(d, rho, eval_samples, eval_rng.next_u64())?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(BATCH_STREAM);

    let tail = (cfg.iterations / 10).max(1);
    let tail_start = cfg.iterations.saturating_sub(tail);
    let mut trajectory = Vec::new();
    let mut final_spectrum = None;
    let start = Instant::now();

    for iteration in 1..=cfg.iterations {
        let (x, y) = sample_gaussian_pairs(d, rho, cfg.batch_size, batch_rng.next_u64())?;
        let step = (|| -> Result<f64> {
            let (e1, c1) = forward(&encoders[0], &x.values, Mode::Train)?;
            let (e2, c2) = forward(&encoders[1], &y.values, Mode::Train)?;
            let l = pair_loss(kind, &e1, &e2, cfg)?;
            if !l.loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            let (g1, _) = backward(&encoders[0], &c1, &l.grad_first)?;
            let (g2, _) = backward(&encoders[1], &c2, &l.grad_second)?;
            adam_step_mlp(&mut encoders[0], &g1, &mut states[0], &cfg.adam)?;
            adam_step_mlp(&mut encoders[1], &g2, &mut states[1], &cfg.adam)?;
            encoders[0].update_running_stats(&c1);
            encoders[1].update_running_stats(&c2);
            Ok(l.loss)
        })();
        let loss = match step {
            Ok(l) => l,
            Err(e) => {
                log::warn!("{} estimator (rho {rho}) aborted at iteration {iteration}: {e}", kind.name());
                manifest.abort(iteration, &e);
                break;
            }
        };
        let estimate = if iteration > tail_start || iteration % cfg.eval_interval == 0 {
            match evaluate(kind, &encoders, &eval_x.values, &eval_y.values, cfg) {
                Ok((v, spec)) => {
                    trajectory.push((iteration, v));
                    final_spectrum = spec;
                    Some(v)
                }
                Err(e) => {
                    manifest.abort(iteration, &e);
                    break;
                }
            }
        } else {
            None
        };
        manifest.push(IterationRecord {
            iteration,
            objective: kind.name().to_string(),
            loss,
            terms: None,
            sigma_sum: None,
            probe_acc: None,
            estimate,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let tail_values: Vec<f64> = trajectory.iter().filter(|(i, _)| *i > tail_start).map(|&(_, v)| v).collect();
    let final_estimate =
        if tail_values.is_empty() { f64::NAN } else { tail_values.iter().sum::<f64>() / tail_values.len() as f64 };
    Ok(EstimatorOutcome { trajectory, final_estimate, final_spectrum, encoders, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 50,
            iterations,
            embed_dim: 2,
            hidden: 8,
            eval_interval: 4,
            centered: true,
            ..Default::default()
        }
    }

    #[test]
    fn trajectory_and_smoothing() {
        let out = train_bimodal_estimator(2, 0.5, EstimatorKind::FmcaTrace, &cfg(20), 200).unwrap();
        assert!(!out.manifest.aborted());
        let iters: Vec<usize> = out.trajectory.iter().map(|p| p.0).collect();
        assert_eq!(iters, vec![4, 8, 12, 16, 19, 20]);
        let expected = (out.trajectory[4].1 + out.trajectory[5].1) / 2.0;
        assert_eq!(out.final_estimate, expected);
        assert!(out.final_spectrum.unwrap().sigmas.len() == 2);
    }

    #[test]
    fn infonce_estimate_is_capped() {
        let out = train_bimodal_estimator(3, 0.9, EstimatorKind::Infonce, &cfg(10), 200).unwrap();
        assert!(out.trajectory.iter().all(|&(_, v)| v <= 50f64.ln()));
    }

    #[test]
    fn deterministic() {
        let a = train_bimodal_estimator(2, 0.3, EstimatorKind::FmcaTrace, &cfg(8), 100).unwrap();
        let b = train_bimodal_estimator(2, 0.3, EstimatorKind::FmcaTrace, &cfg(8), 100).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.encoders, b.encoders);
    }
}
