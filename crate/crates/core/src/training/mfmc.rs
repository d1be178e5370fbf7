//! Tri-modal training: three modality encoders, three fusion heads, and the
//! cyclic objective over (fused pair, held-out modality).

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step_mlp, AdamState};
use super::manifest::{IterationRecord, RunManifest};
use super::probe::linear_probe;
use super::TrainConfig;
use crate::data::TriModalLabeled;
use crate::encoders::{backward, forward, fuse, fuse_backward, init_params, MlpGrads, MlpParams, MlpSpec, Mode};
use crate::error::{Error, Result};
use crate::objectives::{batch_covariances, cyclic_loss, spectrum, CyclicInputs, CyclicLoss, PairObjective};

/// Modality pairs fed to the three fusion heads, lower index first.
pub const FUSION_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

const INIT_STREAM: u64 = 10;
const BATCH_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct MfmcModel {
    pub encoders: [MlpParams; 3],
    /// Heads for the pairs in [`FUSION_PAIRS`] order.
    pub fusions: [MlpParams; 3],
}

impl MfmcModel {
    pub fn init(dims: [usize; 3], cfg: &TrainConfig) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        seeds.set_stream(INIT_STREAM);
        let (k, h, bn) = (cfg.embed_dim, cfg.hidden, cfg.batch_norm);
        let mut encoders = Vec::with_capacity(3);
        for d in dims {
            encoders.push(init_params(&MlpSpec::all_batch_norm(vec![d, h, k], bn)?, seeds.next_u64()));
        }
        let fusion_spec = MlpSpec::all_batch_norm(vec![2 * k, h, k], bn)?;
        let fusions = [(); 3].map(|_| init_params(&fusion_spec, seeds.next_u64()));
        Ok(Self { encoders: encoders.try_into().expect("three encoders"), fusions })
    }

    /// Eval-mode embedding of one modality.
    pub fn embed(&self, modality: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(forward(&self.encoders[modality], x, Mode::Eval)?.0)
    }
}

pub struct TrainOutcome {
    pub model: MfmcModel,
    pub manifest: RunManifest,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.manifest.aborted()
    }
}

struct StepResult {
    loss: CyclicLoss,
    sigma_sum: Option<f64>,
}

fn sigma_sum(inputs: &CyclicInputs, ridge: f64) -> Option<f64> {
    let mut total = 0.0;
    for (fused, single) in inputs.terms() {
        let stats = batch_covariances(fused, single, ridge).ok()?;
        total += spectrum(&stats).ok()?.sum();
    }
    Some(total)
}

fn train_step(
    model: &mut MfmcModel,
    states: &mut [AdamState; 6],
    batch: &[DMatrix<f64>; 3],
    objective: &PairObjective,
    cfg: &TrainConfig,
) -> Result<StepResult> {
    let mut e = Vec::with_capacity(3);
    let mut enc_caches = Vec::with_capacity(3);
    for (net, x) in model.encoders.iter().zip(batch) {
        let (out, cache) = forward(net, x, Mode::Train)?;
        e.push(out);
        enc_caches.push(cache);
    }
    let mut fused = Vec::with_capacity(3);
    let mut fusion_caches = Vec::with_capacity(3);
    for (net, &(a, b)) in model.fusions.iter().zip(&FUSION_PAIRS) {
        let (out, cache) = fuse(net, &e[a], &e[b], Mode::Train)?;
        fused.push(out);
        fusion_caches.push(cache);
    }
    let inputs = CyclicInputs { e1: &e[0], e2: &e[1], e3: &e[2], e12: &fused[0], e13: &fused[1], e23: &fused[2] };
    let loss = cyclic_loss(objective, &inputs)?;
    if !loss.loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let sigma = sigma_sum(&inputs, cfg.ridge);

    let mut grad_e = [loss.grad_e1.clone(), loss.grad_e2.clone(), loss.grad_e3.clone()];
    let upstream = [&loss.grad_e12, &loss.grad_e13, &loss.grad_e23];
    let mut fusion_grads: Vec<MlpGrads> = Vec::with_capacity(3);
    for (i, &(a, b)) in FUSION_PAIRS.iter().enumerate() {
        let (g, ga, gb) = fuse_backward(&model.fusions[i], &fusion_caches[i], upstream[i])?;
        grad_e[a] += ga;
        grad_e[b] += gb;
        fusion_grads.push(g);
    }
    let mut enc_grads: Vec<MlpGrads> = Vec::with_capacity(3);
    for m in 0..3 {
        enc_grads.push(backward(&model.encoders[m], &enc_caches[m], &grad_e[m])?.0);
    }

    let (enc_states, fusion_states) = states.split_at_mut(3);
    for m in 0..3 {
        adam_step_mlp(&mut model.encoders[m], &enc_grads[m], &mut enc_states[m], &cfg.adam)?;
        model.encoders[m].update_running_stats(&enc_caches[m]);
    }
    for i in 0..3 {
        adam_step_mlp(&mut model.fusions[i], &fusion_grads[i], &mut fusion_states[i], &cfg.adam)?;
        model.fusions[i].update_running_stats(&fusion_caches[i]);
    }
    Ok(StepResult { loss, sigma_sum: sigma })
}

/// Held-out linear-probe accuracy of each modality encoder on the first
/// `cfg.probe_samples` rows.
pub fn probe_encoders(model: &MfmcModel, data: &TriModalLabeled, cfg: &TrainConfig) -> Result<[f64; 3]> {
    let rows: Vec<usize> = (0..data.n().min(cfg.probe_samples)).collect();
    let labels: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
    let blocks = data.select(&rows);
    let mut acc = [0.0; 3];
    for m in 0..3 {
        let emb = model.embed(m, &blocks[m])?;
        let probe_cfg = super::ProbeConfig { seed: cfg.seed, ..cfg.probe };
        acc[m] = linear_probe(&emb, &labels, &probe_cfg)?.test_accuracy;
    }
    Ok(acc)
}

/// Runs `cfg.iterations` minibatch steps. Objective failures and non-finite
/// values abort the run; the returned manifest records where and why.
pub fn train_mfmc(data: &TriModalLabeled, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.n() < cfg.batch_size {
        return Err(Error::Config(format!("{} samples cannot fill a batch of {}", data.n(), cfg.batch_size)));
    }
    let mut model = MfmcModel::init(data.dims(), cfg)?;
    let mut states = [0, 1, 2, 3, 4, 5].map(|i| {
        if i < 3 {
            AdamState::for_mlp(&mut model.encoders[i])
        } else {
            AdamState::for_mlp(&mut model.fusions[i - 3])
        }
    });
    let objective = cfg.pair_objective();
    let mut manifest = RunManifest::new(cfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(BATCH_STREAM);
    let start = Instant::now();

    for iteration in 1..=cfg.iterations {
        let idx = index::sample(&mut rng, data.n(), cfg.batch_size).into_vec();
        let batch = data.select(&idx);
        let step = match train_step(&mut model, &mut states, &batch, &objective, cfg) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{} run (seed {}) aborted at iteration {iteration}: {e}", cfg.objective, cfg.seed);
                manifest.abort(iteration, &e);
                break;
            }
        };
        let probe_acc = if cfg.is_eval_iteration(iteration) {
            match probe_encoders(&model, data, cfg) {
                Ok(a) => Some(a),
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
            objective: cfg.objective.name().to_string(),
            loss: step.loss.loss,
            terms: Some(step.loss.terms),
            sigma_sum: step.sigma_sum,
            probe_acc,
            estimate: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(TrainOutcome { model, manifest })
}
