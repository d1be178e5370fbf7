//! Multilayer perceptrons used as modality encoders and fusion heads.
//!
//! Hidden layers are `affine → [batch norm] → ReLU`; the last layer is affine.
//! Weights are stored `out × in` and inputs are `B × in` row batches, so a
//! layer computes `X Wᵀ + 1 bᵀ`. Gradients are returned for the loss exactly
//! as given by the upstream gradient; no extra `1/B` is applied.

pub mod checkpoint;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    batch_norm: Vec<bool>,
}

impl MlpSpec {
    /// Plain MLP, no batch norm.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::with_batch_norm(widths, vec![false; hidden])
    }

    /// `batch_norm[i]` enables batch norm after hidden layer `i`.
    pub fn with_batch_norm(widths: Vec<usize>, batch_norm: Vec<bool>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!("an MLP needs at least 2 widths, got {widths:?}")));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero width in {widths:?}")));
        }
        if batch_norm.len() != widths.len() - 2 {
            return Err(Error::Config(format!(
                "{} batch-norm flags for {} hidden layers",
                batch_norm.len(),
                widths.len() - 2
            )));
        }
        Ok(Self { widths, batch_norm })
    }

    pub fn all_batch_norm(widths: Vec<usize>, enabled: bool) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::with_batch_norm(widths, vec![enabled; hidden])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn batch_norm(&self) -> &[bool] {
        &self.batch_norm
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Fusion head mapping `[e_a | e_b]` (width `2K`) to a joint embedding of width `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl FusionSpec {
    pub fn mlp_spec(&self, batch_norm: bool) -> Result<MlpSpec> {
        MlpSpec::all_batch_norm(vec![2 * self.embed_dim, self.hidden, self.embed_dim], batch_norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub norms: Vec<Option<BatchNorm>>,
}

/// Gradients with the same layout as the trainable part of [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
    /// `(gamma, beta)` gradients.
    pub norms: Vec<Option<(DVector<f64>, DVector<f64>)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    mean: DVector<f64>,
    var: DVector<f64>,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    /// Input to each affine layer.
    inputs: Vec<DMatrix<f64>>,
    /// ReLU input for each hidden layer.
    relu_in: Vec<DMatrix<f64>>,
    bn: Vec<Option<BnCache>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Glorot-uniform weights, zero biases, identity batch norm. Deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layer_count());
    for w in spec.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
        layers.push(Dense { weight, bias: DVector::zeros(fan_out) });
    }
    let norms = spec.batch_norm.iter().zip(&spec.widths[1..]).map(|(&on, &w)| on.then(|| BatchNorm::new(w))).collect();
    MlpParams { spec: spec.clone(), layers, norms }
}

fn affine(x: &DMatrix<f64>, layer: &Dense) -> DMatrix<f64> {
    let mut z = x * layer.weight.transpose();
    for mut row in z.row_iter_mut() {
        row += layer.bias.transpose();
    }
    z
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn bn_forward(z: &DMatrix<f64>, bn: &BatchNorm, mode: Mode) -> (DMatrix<f64>, BnCache) {
    let b = z.nrows() as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = column_sums(z) / b;
            let var = DVector::from_iterator(
                z.ncols(),
                z.column_iter().zip(mean.iter()).map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b),
            );
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
    let xhat = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| (z[(i, j)] - mean[j]) * inv_std[j]);
    let out = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| xhat[(i, j)] * bn.gamma[j] + bn.beta[j]);
    (out, BnCache { xhat, inv_std, mean, var })
}

fn bn_backward(
    g: &DMatrix<f64>,
    bn: &BatchNorm,
    cache: &BnCache,
    mode: Mode,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let dbeta = column_sums(g);
    let dgamma = column_sums(&g.component_mul(&cache.xhat));
    let b = g.nrows() as f64;
    let dx = match mode {
        Mode::Eval => DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * bn.gamma[j] * cache.inv_std[j]),
        Mode::Train => DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| {
            let dxhat = g[(i, j)] * bn.gamma[j];
            let sum_dxhat = dbeta[j] * bn.gamma[j];
            let sum_dxhat_xhat = dgamma[j] * bn.gamma[j];
            cache.inv_std[j] / b * (b * dxhat - sum_dxhat - cache.xhat[(i, j)] * sum_dxhat_xhat)
        }),
    };
    (dx, dgamma, dbeta)
}

/// Runs the network on a `B × D` batch.
pub fn forward(params: &MlpParams, input: &DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, ForwardCache)> {
    if input.ncols() != params.spec.input_width() {
        return Err(Error::Shape(format!(
            "input width {} does not match network input {}",
            input.ncols(),
            params.spec.input_width()
        )));
    }
    let last = params.layers.len() - 1;
    let mut cache = ForwardCache {
        mode,
        inputs: Vec::with_capacity(params.layers.len()),
        relu_in: Vec::with_capacity(last),
        bn: Vec::with_capacity(last),
    };
    let mut a = input.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&a, layer);
        cache.inputs.push(a);
        if l == last {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activations of layer {l}")));
            }
            return Ok((z, cache));
        }
        let (pre, bn) = match &params.norms[l] {
            Some(norm) => {
                let (out, c) = bn_forward(&z, norm, mode);
                (out, Some(c))
            }
            None => (z, None),
        };
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activations of layer {l}")));
        }
        a = pre.map(|v| v.max(0.0));
        cache.relu_in.push(pre);
        cache.bn.push(bn);
    }
    unreachable!("network has at least one layer")
}

/// Reverse-mode pass. Returns parameter gradients and the gradient with
/// respect to the network input.
pub fn backward(params: &MlpParams, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<(MlpGrads, DMatrix<f64>)> {
    let last = params.layers.len() - 1;
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::Shape("forward cache does not match the network depth".into()));
    }
    if upstream.shape() != (cache.batch(), params.spec.output_width()) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            (cache.batch(), params.spec.output_width())
        )));
    }
    let mut layer_grads: Vec<Option<Dense>> = vec![None; params.layers.len()];
    let mut norm_grads: Vec<Option<(DVector<f64>, DVector<f64>)>> = vec![None; last];
    let mut g = upstream.clone();
    for l in (0..=last).rev() {
        if l < last {
            let relu_in = &cache.relu_in[l];
            g.zip_apply(relu_in, |gv, x| {
                if x <= 0.0 {
                    *gv = 0.0;
                }
            });
            if let (Some(norm), Some(bc)) = (&params.norms[l], &cache.bn[l]) {
                let (dx, dgamma, dbeta) = bn_backward(&g, norm, bc, cache.mode);
                norm_grads[l] = Some((dgamma, dbeta));
                g = dx;
            }
        }
        let input = &cache.inputs[l];
        let layer = &params.layers[l];
        if input.ncols() != layer.weight.ncols() {
            return Err(Error::Shape(format!("stale cache at layer {l}")));
        }
        layer_grads[l] = Some(Dense { weight: g.tr_mul(input), bias: column_sums(&g) });
        g = &g * &layer.weight;
    }
    Ok((
        MlpGrads {
            layers: layer_grads.into_iter().map(|d| d.expect("every layer visited")).collect(),
            norms: norm_grads,
        },
        g,
    ))
}

impl MlpParams {
    /// Exponential moving update of batch-norm running statistics from a
    /// training-mode forward pass.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let b = cache.batch() as f64;
        for (norm, bc) in self.norms.iter_mut().zip(&cache.bn) {
            if let (Some(norm), Some(bc)) = (norm, bc) {
                let unbiased = if b > 1.0 { &bc.var * (b / (b - 1.0)) } else { bc.var.clone() };
                norm.running_mean = &norm.running_mean * (1.0 - BN_MOMENTUM) + &bc.mean * BN_MOMENTUM;
                norm.running_var = &norm.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
            }
        }
    }

    /// Trainable tensors in a fixed order shared with [`MlpGrads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_mut_slice()));
            out.push((format!("layer{l}.bias"), layer.bias.as_mut_slice()));
            if let Some(Some(norm)) = norms.next() {
                out.push((format!("bn{l}.gamma"), norm.gamma.as_mut_slice()));
                out.push((format!("bn{l}.beta"), norm.beta.as_mut_slice()));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut clone = self.clone();
        clone.tensors_mut().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_slice()));
            out.push((format!("layer{l}.bias"), layer.bias.as_slice()));
            if let Some(Some((gamma, beta))) = norms.next() {
                out.push((format!("bn{l}.gamma"), gamma.as_slice()));
                out.push((format!("bn{l}.beta"), beta.as_slice()));
            }
        }
        out
    }

    /// Elementwise sum, used when one network feeds several loss terms.
    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        for (a, b) in self.norms.iter_mut().zip(&other.norms) {
            if let (Some(a), Some(b)) = (a, b) {
                a.0 += &b.0;
                a.1 += &b.1;
            }
        }
    }
}

/// Runs a fusion head on the column concatenation `[e_a | e_b]`.
pub fn fuse(
    params: &MlpParams,
    e_a: &DMatrix<f64>,
    e_b: &DMatrix<f64>,
    mode: Mode,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    if e_a.shape() != e_b.shape() {
        return Err(Error::Shape(format!("fusion inputs {:?} and {:?} differ", e_a.shape(), e_b.shape())));
    }
    let k = e_a.ncols();
    let mut cat = DMatrix::zeros(e_a.nrows(), 2 * k);
    cat.columns_mut(0, k).copy_from(e_a);
    cat.columns_mut(k, k).copy_from(e_b);
    forward(params, &cat, mode)
}

/// Backward through [`fuse`]; splits the input gradient back into the two halves.
pub fn fuse_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &DMatrix<f64>,
) -> Result<(MlpGrads, DMatrix<f64>, DMatrix<f64>)> {
    let (grads, g) = backward(params, cache, upstream)?;
    let k = g.ncols() / 2;
    Ok((grads, g.columns(0, k).clone_owned(), g.columns(k, k).clone_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = MlpSpec::new(vec![2, 4, 3]).unwrap();
        let a = init_params(&spec, 5);
        let b = init_params(&spec, 5);
        assert_eq!(a, b);
        assert_eq!(a.layers[0].weight.shape(), (4, 2));
        assert_eq!(a.layers[1].weight.shape(), (3, 4));
        assert_eq!(a.layers[0].bias.len(), 4);
        assert_eq!(a.layers[1].bias.len(), 3);
        let c = init_params(&spec, 6);
        assert_ne!(a.layers[0].weight, c.layers[0].weight);
        let limit = (6.0f64 / 6.0).sqrt();
        assert!(a.layers[0].weight.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn bad_specs() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
        assert!(MlpSpec::with_batch_norm(vec![3, 4, 2], vec![]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let mut p = init_params(&spec, 1);
        for l in &mut p.layers {
            l.weight.fill(0.0);
        }
        let x = DMatrix::from_element(4, 3, 0.7);
        let (y, _) = forward(&p, &x, Mode::Train).unwrap();
        assert_eq!(y, DMatrix::zeros(4, 2));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::new(vec![3, 3]).unwrap();
        let mut p = init_params(&spec, 1);
        p.layers[0].weight = DMatrix::identity(3, 3);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let (y, _) = forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_computed_scalar_network() {
        // widths [1,2,1]: h = relu([2, -1]·x + [0.5, 0.25]), y = [3, 4]·h − 1.
        let spec = MlpSpec::new(vec![1, 2, 1]).unwrap();
        let mut p = init_params(&spec, 0);
        p.layers[0].weight = DMatrix::from_column_slice(2, 1, &[2.0, -1.0]);
        p.layers[0].bias = DVector::from_vec(vec![0.5, 0.25]);
        p.layers[1].weight = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        p.layers[1].bias = DVector::from_vec(vec![-1.0]);
        let (y, _) = forward(&p, &DMatrix::from_element(1, 1, 1.0), Mode::Eval).unwrap();
        // h = [2.5, 0], y = 7.5 − 1
        assert_abs_diff_eq!(y[(0, 0)], 6.5, epsilon = 1e-15);
    }

    #[test]
    fn shape_errors() {
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        let p = init_params(&spec, 1);
        assert!(forward(&p, &DMatrix::zeros(2, 4), Mode::Eval).is_err());
        let (_, cache) = forward(&p, &DMatrix::zeros(2, 3), Mode::Eval).unwrap();
        assert!(backward(&p, &cache, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let spec = MlpSpec::all_batch_norm(vec![2, 4, 2], true).unwrap();
        let p = init_params(&spec, 3);
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.3, 0.4, 1.0, -1.0]);
        let (_, cache) = forward(&p, &x, Mode::Train).unwrap();
        let (g, gx) = backward(&p, &cache, &DMatrix::zeros(3, 2)).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
        assert_eq!(gx, DMatrix::zeros(3, 2));
    }

    #[test]
    fn single_linear_layer_gradient() {
        // y = x Wᵀ + b with W 2×2; dW = upstreamᵀ x, db = Σ rows upstream.
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let mut p = init_params(&spec, 0);
        p.layers[0].weight = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let up = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let (_, cache) = forward(&p, &x, Mode::Eval).unwrap();
        let (g, gx) = backward(&p, &cache, &up).unwrap();
        assert_eq!(g.layers[0].weight, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 4.0]));
        assert_eq!(g.layers[0].bias.as_slice(), &[1.5, 1.0]);
        assert_eq!(gx, DMatrix::from_row_slice(2, 2, &[-2.0, -2.0, 6.5, 9.0]));
    }

    #[test]
    fn dead_relu_outputs_final_bias() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let mut p = init_params(&spec, 4);
        p.layers[0].weight.fill(1.0);
        p.layers[0].bias.fill(-100.0);
        p.layers[1].bias = DVector::from_vec(vec![0.3, -0.7]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let (y, _) = forward(&p, &x, Mode::Eval).unwrap();
        for r in 0..2 {
            assert_eq!(y[(r, 0)], 0.3);
            assert_eq!(y[(r, 1)], -0.7);
        }
    }

    #[test]
    fn fusion_sum_layer() {
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let mut p = init_params(&spec, 0);
        p.layers[0].weight = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.5, -2.0, 1.0]);
        let (y, _) = fuse(&p, &a, &b, Mode::Eval).unwrap();
        assert_eq!(y, &a + &b);
    }

    #[test]
    fn fusion_matches_forward_on_concatenation() {
        let fs = FusionSpec { embed_dim: 3, hidden: 5 };
        let p = init_params(&fs.mlp_spec(false).unwrap(), 8);
        let a = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.5);
        let b = DMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * -0.2 + 0.3);
        let (y, _) = fuse(&p, &a, &b, Mode::Eval).unwrap();
        let cat = DMatrix::from_fn(4, 6, |i, j| if j < 3 { a[(i, j)] } else { b[(i, j - 3)] });
        let (y2, _) = forward(&p, &cat, Mode::Eval).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let spec = MlpSpec::all_batch_norm(vec![1, 2, 1], true).unwrap();
        let mut p = init_params(&spec, 2);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let (_, cache) = forward(&p, &x, Mode::Train).unwrap();
        p.update_running_stats(&cache);
        let bn = p.norms[0].as_ref().unwrap();
        assert!(bn.running_mean.iter().any(|m| *m != 0.0));
    }
}
