//! Trainable dependence objectives. Every loss is minimized and returns its
//! gradient with respect to the embedding batches it consumed.

pub mod contrastive;
pub mod covariance;
pub mod cyclic;
pub mod fmca;

pub use contrastive::{clip_loss, clip_pp_loss, infonce_loss, infonce_mi_estimate, ContrastiveConfig, TripleLoss};
pub use covariance::{
    batch_covariances, batch_covariances_with, CovarianceGrad, CovarianceOptions, CovarianceStats, PairLoss,
    DEFAULT_RIDGE,
};
pub use cyclic::{cyclic_loss, mfmc_cyclic_loss, CyclicInputs, CyclicLoss, PairObjective, TRAINING_NORM_FLOOR};
pub use fmca::{
    first_order_gap, first_order_gap_bound, logdet_loss, logdet_objective, spectral_loss, spectrum, trace_loss,
    trace_objective, tsd_linear, tsd_log, SpectralObjective, Spectrum,
};
