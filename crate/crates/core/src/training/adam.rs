//! Bias-corrected Adam over named flat tensors.

use serde::{Deserialize, Serialize};

use crate::encoders::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.5, beta2: 0.9, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Moment accumulators, one buffer per tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_mlp(params: &mut MlpParams) -> Self {
        let sizes: Vec<usize> = params.tensors_mut().iter().map(|(_, t)| t.len()).collect();
        Self::new(&sizes)
    }
}

/// One update of every tensor. Validates all shapes and gradients before
/// touching any parameter, so a failed step leaves the state unchanged.
pub fn adam_step(
    params: &mut [(String, &mut [f64])],
    grads: &[(String, &[f64])],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, ((pname, p), (gname, g))) in params.iter().zip(grads).enumerate() {
        if pname != gname || p.len() != g.len() || state.first[i].len() != p.len() {
            return Err(Error::Shape(format!(
                "parameter {pname} ({}) does not match gradient {gname} ({})",
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {pname}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

pub fn adam_step_mlp(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    adam_step(&mut p, &g, state, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn step_scalar(p: &mut f64, g: f64, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
        let mut buf = [*p];
        let grads = [g];
        {
            let mut params = vec![("w".to_string(), &mut buf[..])];
            adam_step(&mut params, &[("w".to_string(), &grads[..])], state, cfg)?;
        }
        *p = buf[0];
        Ok(())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&[1]);
        let mut p = 0.7;
        step_scalar(&mut p, 0.0, &mut state, &cfg).unwrap();
        assert_eq!(p, 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [2.5, -0.01] {
            let mut state = AdamState::new(&[1]);
            let mut p = 1.0;
            step_scalar(&mut p, g, &mut state, &cfg).unwrap();
            let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert_abs_diff_eq!(p, expected, epsilon = 1e-16);
            assert_abs_diff_eq!(p, 1.0 - cfg.learning_rate * g.signum(), epsilon = 1e-9);
        }
    }

    #[test]
    fn two_constant_steps_hand_computed() {
        // g = 1, beta1 = 0.5, beta2 = 0.9:
        // m1 = 0.5, v1 = 0.1, m2 = 0.75, v2 = 0.19; bias-corrected both equal 1.
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&[1]);
        let mut p = 0.0;
        step_scalar(&mut p, 1.0, &mut state, &cfg).unwrap();
        step_scalar(&mut p, 1.0, &mut state, &cfg).unwrap();
        assert_abs_diff_eq!(state.first[0][0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(state.second[0][0], 0.19, epsilon = 1e-15);
        let per_step = cfg.learning_rate / (1.0 + cfg.epsilon);
        assert_abs_diff_eq!(p, -2.0 * per_step, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&[2]);
        let mut buf = [0.0, 0.0];
        let g = [1.0, f64::NAN];
        let mut params = vec![("layer0.bias".to_string(), &mut buf[..])];
        let err = adam_step(&mut params, &[("layer0.bias".to_string(), &g[..])], &mut state, &cfg).unwrap_err();
        assert!(err.to_string().contains("layer0.bias"));
        assert_eq!(state.step, 0);
        assert_eq!(buf, [0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&[2]);
        let mut buf = [0.0, 0.0];
        let g = [1.0];
        let mut params = vec![("w".to_string(), &mut buf[..])];
        assert!(adam_step(&mut params, &[("w".to_string(), &g[..])], &mut state, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
