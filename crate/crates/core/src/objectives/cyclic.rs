//! Tri-modal cyclic objective over (fused pair, held-out modality) terms.
//!
//! Term 1 pairs `e12` with `e3`, term 2 pairs `e13` with `e2`, term 3 pairs
//! `e23` with `e1`. Each term is a two-view objective with the fused embedding
//! in the first slot.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::contrastive::{infonce_loss, ContrastiveConfig};
use super::covariance::{CovarianceOptions, PairLoss};
use super::fmca::{spectral_loss, SpectralObjective};
use crate::error::{Error, Result};

/// Cosine-similarity floor used by the InfoNCE terms, so a network whose
/// hidden units are all inactive for some row does not abort training.
pub const TRAINING_NORM_FLOOR: f64 = 1e-12;

/// Embedding batches for one cyclic evaluation, all `B × K`.
#[derive(Debug, Clone, Copy)]
pub struct CyclicInputs<'a> {
    pub e1: &'a DMatrix<f64>,
    pub e2: &'a DMatrix<f64>,
    pub e3: &'a DMatrix<f64>,
    pub e12: &'a DMatrix<f64>,
    pub e13: &'a DMatrix<f64>,
    pub e23: &'a DMatrix<f64>,
}

impl<'a> CyclicInputs<'a> {
    /// `(fused, single)` for each term, in term order.
    pub fn terms(&self) -> [(&'a DMatrix<f64>, &'a DMatrix<f64>); 3] {
        [(self.e12, self.e3), (self.e13, self.e2), (self.e23, self.e1)]
    }
}

/// Gradients follow the field order of [`CyclicInputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicLoss {
    pub loss: f64,
    pub terms: [f64; 3],
    pub grad_e1: DMatrix<f64>,
    pub grad_e2: DMatrix<f64>,
    pub grad_e3: DMatrix<f64>,
    pub grad_e12: DMatrix<f64>,
    pub grad_e13: DMatrix<f64>,
    pub grad_e23: DMatrix<f64>,
}

/// Objective applied to each (fused, single) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairObjective {
    Trace { ridge: f64 },
    LogDet { ridge: f64 },
    InfoNce { temperature: f64 },
}

impl PairObjective {
    pub fn evaluate(&self, fused: &DMatrix<f64>, single: &DMatrix<f64>) -> Result<PairLoss> {
        match *self {
            PairObjective::Trace { ridge } => {
                spectral_loss(SpectralObjective::Trace, fused, single, &CovarianceOptions::uncentered(ridge))
            }
            PairObjective::LogDet { ridge } => {
                spectral_loss(SpectralObjective::LogDet, fused, single, &CovarianceOptions::uncentered(ridge))
            }
            PairObjective::InfoNce { temperature } => {
                infonce_loss(fused, single, &ContrastiveConfig::new(temperature)?.with_norm_floor(TRAINING_NORM_FLOOR)?)
            }
        }
    }
}

fn check_inputs(inputs: &CyclicInputs) -> Result<()> {
    let shape = inputs.e1.shape();
    for (name, e) in
        [("e2", inputs.e2), ("e3", inputs.e3), ("e12", inputs.e12), ("e13", inputs.e13), ("e23", inputs.e23)]
    {
        if e.shape() != shape {
            return Err(Error::Shape(format!("{name} is {:?}, e1 is {shape:?}", e.shape())));
        }
    }
    Ok(())
}

pub fn cyclic_loss(objective: &PairObjective, inputs: &CyclicInputs) -> Result<CyclicLoss> {
    check_inputs(inputs)?;
    let mut results = Vec::with_capacity(3);
    for (idx, (fused, single)) in inputs.terms().into_iter().enumerate() {
        let r =
            objective.evaluate(fused, single).map_err(|e| Error::CyclicTerm { term: idx + 1, source: Box::new(e) })?;
        results.push(r);
    }
    let [t1, t2, t3]: [PairLoss; 3] = results.try_into().expect("three terms");
    Ok(CyclicLoss {
        loss: t1.loss + t2.loss + t3.loss,
        terms: [t1.loss, t2.loss, t3.loss],
        grad_e12: t1.grad_first,
        grad_e3: t1.grad_second,
        grad_e13: t2.grad_first,
        grad_e2: t2.grad_second,
        grad_e23: t3.grad_first,
        grad_e1: t3.grad_second,
    })
}

/// Sum of the three trace terms: `−Σ tr(R_pair⁻¹ P R_single⁻¹ Pᵀ)`.
pub fn mfmc_cyclic_loss(inputs: &CyclicInputs, ridge: f64) -> Result<CyclicLoss> {
    cyclic_loss(&PairObjective::Trace { ridge }, inputs)
}
