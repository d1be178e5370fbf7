//! Seeded synthetic generators: equicorrelated Gaussians, the two functional
//! families used for the Gram-entropy bound study, paired Gaussians with known
//! mutual information, and a labeled tri-modal latent-class family.
//!
//! All generators use ChaCha8 seeded from a `u64`, so a `(arguments, seed)`
//! pair fixes every sample bit for bit.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::EquicorrelatedGaussian;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Equicorrelated,
    DataA,
    DataB,
    GaussianPairs,
    LatentClass,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Equicorrelated => "equicorrelated",
            Family::DataA => "data-a",
            Family::DataB => "data-b",
            Family::GaussianPairs => "gaussian-pairs",
            Family::LatentClass => "latent-class",
        }
    }
}

/// `N × M` samples, one row per draw, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub values: DMatrix<f64>,
    pub seed: u64,
    pub family: Family,
}

impl SampleMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self, prefix: &str) -> Vec<String> {
        (1..=self.m()).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Three aligned modality blocks with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TriModalLabeled {
    pub modalities: [DMatrix<f64>; 3],
    pub labels: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl TriModalLabeled {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.modalities[0].ncols(), self.modalities[1].ncols(), self.modalities[2].ncols()]
    }

    /// Rows `idx` of every modality, in order.
    pub fn select(&self, idx: &[usize]) -> [DMatrix<f64>; 3] {
        self.modalities.clone().map(|m| m.select_rows(idx))
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Rows are `L z` with `L Lᵀ = Σ` the equicorrelation matrix and `z ~ N(0, I)`.
pub fn sample_equicorrelated(m: usize, rho: f64, n: usize, seed: u64) -> Result<SampleMatrix> {
    check_n(n)?;
    let model = EquicorrelatedGaussian::new(m, rho)?;
    let chol = linalg::cholesky(&model.covariance())?;
    let l = chol.l();
    let mut r = rng(seed);
    let z = DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal));
    // Draws are generated column-major (one column per sample) so each sample
    // consumes a contiguous run of the stream.
    let values = (l * z).transpose();
    Ok(SampleMatrix { values, seed, family: Family::Equicorrelated })
}

/// Data A from explicit uniforms: `uniforms` is `N × (m−1)`, the result is
/// `[mean(u)² | u]`.
pub fn data_a_from_uniforms(uniforms: &DMatrix<f64>, seed: u64) -> Result<SampleMatrix> {
    if uniforms.ncols() < 2 {
        return Err(Error::Domain(format!("Data A needs m >= 3, got m = {}", uniforms.ncols() + 1)));
    }
    check_n(uniforms.nrows())?;
    let n = uniforms.nrows();
    let k = uniforms.ncols();
    let mut values = DMatrix::zeros(n, k + 1);
    for i in 0..n {
        let mean = uniforms.row(i).sum() / k as f64;
        values[(i, 0)] = mean * mean;
    }
    values.columns_mut(1, k).copy_from(uniforms);
    Ok(SampleMatrix { values, seed, family: Family::DataA })
}

/// `X_2..X_m ~ U[0,1]` i.i.d., `X_1 = (mean of X_2..X_m)²`.
pub fn sample_data_a(m: usize, n: usize, seed: u64) -> Result<SampleMatrix> {
    if m < 3 {
        return Err(Error::Domain(format!("Data A needs m >= 3, got {m}")));
    }
    check_n(n)?;
    let mut r = rng(seed);
    let mut u = DMatrix::zeros(n, m - 1);
    for i in 0..n {
        for j in 0..m - 1 {
            u[(i, j)] = r.random::<f64>();
        }
    }
    data_a_from_uniforms(&u, seed)
}

/// `X_1 ~ U[0,1]`, every other column equal to `X_1² + X_1`.
pub fn sample_data_b(m: usize, n: usize, seed: u64) -> Result<SampleMatrix> {
    if m < 2 {
        return Err(Error::Domain(format!("Data B needs m >= 2, got {m}")));
    }
    check_n(n)?;
    let mut r = rng(seed);
    let mut values = DMatrix::zeros(n, m);
    for i in 0..n {
        let x: f64 = r.random();
        values[(i, 0)] = x;
        for j in 1..m {
            values[(i, j)] = x * x + x;
        }
    }
    Ok(SampleMatrix { values, seed, family: Family::DataB })
}

/// `d` independent coordinate pairs with `corr(X_j, Y_j) = rho`.
pub fn sample_gaussian_pairs(d: usize, rho: f64, n: usize, seed: u64) -> Result<(SampleMatrix, SampleMatrix)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("rho must satisfy |rho| < 1, got {rho}")));
    }
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    check_n(n)?;
    let mut r = rng(seed);
    let s = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            x[(i, j)] = a;
            y[(i, j)] = rho * a + s * b;
        }
    }
    let wrap = |values| SampleMatrix { values, seed, family: Family::GaussianPairs };
    Ok((wrap(x), wrap(y)))
}

/// Parameters of the labeled tri-modal family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentClassConfig {
    pub classes: usize,
    pub noise: f64,
    pub dims: [usize; 3],
}

impl Default for LatentClassConfig {
    fn default() -> Self {
        Self { classes: 4, noise: 0.5, dims: [8, 6, 4] }
    }
}

/// Labels are uniform over classes. Each modality of a sample is its class's
/// anchor plus isotropic Gaussian noise of standard deviation `noise`.
/// Anchors are `N(0, I)` draws fixed by the seed.
pub fn sample_latent_class_trimodal(cfg: &LatentClassConfig, n: usize, seed: u64) -> Result<TriModalLabeled> {
    if cfg.classes < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Domain(format!("noise must be >= 0, got {}", cfg.noise)));
    }
    if cfg.dims.contains(&0) {
        return Err(Error::Domain(format!("modality dims must be positive, got {:?}", cfg.dims)));
    }
    check_n(n)?;
    // Anchors and samples come from separate streams so the anchors do not
    // depend on n.
    let mut anchor_rng = rng(seed);
    anchor_rng.set_stream(1);
    let anchors: Vec<Vec<DVector<f64>>> = cfg
        .dims
        .iter()
        .map(|&d| (0..cfg.classes).map(|_| DVector::from_fn(d, |_, _| anchor_rng.sample(StandardNormal))).collect())
        .collect();
    let mut r = rng(seed);
    r.set_stream(2);
    let mut modalities = cfg.dims.map(|d| DMatrix::zeros(n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = r.random_range(0..cfg.classes);
        labels.push(y);
        for (m, block) in modalities.iter_mut().enumerate() {
            for j in 0..block.ncols() {
                let z: f64 = r.sample(StandardNormal);
                block[(i, j)] = anchors[m][y][j] + cfg.noise * z;
            }
        }
    }
    Ok(TriModalLabeled { modalities, labels, classes: cfg.classes, seed })
}

/// Comma-separated, LF-terminated, header row, shortest round-trip decimals.
pub fn write_matrix_csv<W: Write>(writer: W, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    if names.len() != values.ncols() {
        return Err(Error::Shape(format!("{} column names for {} columns", names.len(), values.ncols())));
    }
    let mut w = csv_writer(writer);
    w.write_record(names)?;
    for row in values.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV writer with the dialect used for every artifact.
pub fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer)
}
