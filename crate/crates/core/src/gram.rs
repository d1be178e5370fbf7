//! Matrix-based Rényi entropy on trace-normalized Gaussian Gram matrices, and
//! the DTC / mutual-information estimators built from Hadamard products.
//!
//! Each variable is an `N × d` sample matrix (one sample per row). Joint
//! entropies of several variables use the trace-normalized Hadamard product of
//! their Gram matrices. All entropies are in bits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues below this are dropped from the Shannon-limit sum.
const SHANNON_FLOOR: f64 = 1e-12;

/// Tolerated negative eigenvalue before clipping.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Bandwidth used when the median heuristic has no nonzero distance to work with.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of the nonzero pairwise distances of the variable.
    Median,
}

/// Gaussian kernel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::Median }
    }
}

impl KernelConfig {
    pub fn fixed(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth: Bandwidth::Fixed(bandwidth) })
    }
}

/// Rényi order `alpha > 0`. `alpha == 1` selects the Shannon limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiOrder(f64);

impl RenyiOrder {
    pub const SHANNON: RenyiOrder = RenyiOrder(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("Renyi order must be positive, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

impl Default for RenyiOrder {
    fn default() -> Self {
        RenyiOrder(1.01)
    }
}

/// Symmetric, PSD, unit-trace kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    bandwidth: f64,
    bandwidth_fallback: bool,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Bandwidth actually used (NaN for Hadamard joints).
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Set when the median heuristic found no nonzero distance.
    pub fn bandwidth_fallback(&self) -> bool {
        self.bandwidth_fallback
    }

    /// Wraps an arbitrary symmetric PSD matrix, normalizing it to unit trace.
    pub fn from_unnormalized(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Shape(format!("{}x{} is not a square Gram matrix", m.nrows(), m.ncols())));
        }
        let trace = m.trace();
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(Error::NonFinite("Gram trace".into()));
        }
        Ok(Self { entries: m / trace, bandwidth: f64::NAN, bandwidth_fallback: false })
    }
}

fn pairwise_sq_distances(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..samples.ncols() {
                let diff = samples[(i, k)] - samples[(j, k)];
                s += diff * diff;
            }
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Median of the nonzero pairwise distances, `None` if there are none.
pub fn median_distance(samples: &DMatrix<f64>) -> Option<f64> {
    let sq = pairwise_sq_distances(samples);
    let n = sq.nrows();
    let mut dists: Vec<f64> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            if sq[(i, j)] > 0.0 {
                dists.push(sq[(i, j)].sqrt());
            }
        }
    }
    if dists.is_empty() {
        return None;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    Some(if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] })
}

/// Trace-normalized Gaussian Gram matrix of one variable's samples.
pub fn gram_matrix(samples: &DMatrix<f64>, config: &KernelConfig) -> Result<GramMatrix> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::Shape(format!("need at least 2 samples, got {n}")));
    }
    if !linalg::all_finite(samples) {
        return Err(Error::NonFinite("kernel samples".into()));
    }
    let (bandwidth, bandwidth_fallback) = match config.bandwidth {
        Bandwidth::Fixed(bw) => {
            if !(bw > 0.0) {
                return Err(Error::Domain(format!("bandwidth must be positive, got {bw}")));
            }
            (bw, false)
        }
        Bandwidth::Median => match median_distance(samples) {
            Some(bw) => (bw, false),
            None => {
                log::warn!("all samples identical; falling back to bandwidth {FALLBACK_BANDWIDTH}");
                (FALLBACK_BANDWIDTH, true)
            }
        },
    };
    let scale = -1.0 / (2.0 * bandwidth * bandwidth);
    let sq = pairwise_sq_distances(samples);
    let entries = sq.map(|d| (d * scale).exp()) / n as f64;
    Ok(GramMatrix { entries, bandwidth, bandwidth_fallback })
}

/// Convenience for scalar variables.
pub fn gram_matrix_scalar(samples: &[f64], config: &KernelConfig) -> Result<GramMatrix> {
    gram_matrix(&DMatrix::from_column_slice(samples.len(), 1, samples), config)
}

/// Rényi entropy of a unit-trace spectrum, in bits.
pub fn renyi_entropy_of_spectrum(eigenvalues: &[f64], order: RenyiOrder) -> f64 {
    let alpha = order.alpha();
    let clipped = eigenvalues.iter().map(|l| l.max(0.0));
    if alpha == 1.0 {
        -clipped.filter(|&l| l > SHANNON_FLOOR).map(|l| l * l.log2()).sum::<f64>()
    } else {
        let s: f64 = clipped.map(|l| l.powf(alpha)).sum();
        s.log2() / (1.0 - alpha)
    }
}

/// `S_α(A) = 1/(1-α) · log2 Σ λ_i^α` over the eigenvalues of `a`.
pub fn matrix_renyi_entropy(a: &GramMatrix, order: RenyiOrder) -> Result<f64> {
    let eigenvalues = linalg::sym_eigenvalues_only(&a.entries)?;
    let min = *eigenvalues.last().unwrap();
    if min < -PSD_TOLERANCE {
        log::debug!("Gram eigenvalue {min:e} below tolerance, clipping");
    }
    Ok(renyi_entropy_of_spectrum(&eigenvalues, order))
}

/// Trace-normalized entrywise product of all `grams`.
pub fn hadamard_joint(grams: &[&GramMatrix]) -> Result<GramMatrix> {
    let first = grams.first().ok_or_else(|| Error::Shape("empty Gram list".into()))?;
    let n = first.n();
    let mut acc = first.entries.clone();
    for g in &grams[1..] {
        if g.n() != n {
            return Err(Error::Shape(format!("Gram sizes {n} and {} differ", g.n())));
        }
        acc.component_mul_assign(&g.entries);
    }
    if grams.len() == 1 {
        return Ok((*first).clone());
    }
    GramMatrix::from_unnormalized(acc)
}

fn check_aligned(variables: &[&DMatrix<f64>]) -> Result<usize> {
    let n = variables.first().ok_or_else(|| Error::Shape("no variables".into()))?.nrows();
    for (i, v) in variables.iter().enumerate() {
        if v.nrows() != n {
            return Err(Error::Shape(format!("variable {i} has {} samples, expected {n}", v.nrows())));
        }
    }
    Ok(n)
}

fn grams_of(variables: &[&DMatrix<f64>], config: &KernelConfig) -> Result<Vec<GramMatrix>> {
    variables.iter().map(|v| gram_matrix(v, config)).collect()
}

fn joint_entropy_excluding(grams: &[GramMatrix], skip: Option<usize>, order: RenyiOrder) -> Result<f64> {
    let parts: Vec<&GramMatrix> = grams.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, g)| g).collect();
    matrix_renyi_entropy(&hadamard_joint(&parts)?, order)
}

/// `Σ_i S_α(A_rest_i) − (M−1)·S_α(A_all)`. Finite-sample estimates can be
/// slightly negative and are returned as is.
pub fn dtc_alpha(variables: &[&DMatrix<f64>], order: RenyiOrder, config: &KernelConfig) -> Result<f64> {
    if variables.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 variables, got {}", variables.len())));
    }
    check_aligned(variables)?;
    let grams = grams_of(variables, config)?;
    let m = grams.len();
    let s_all = joint_entropy_excluding(&grams, None, order)?;
    let mut total = -(m as f64 - 1.0) * s_all;
    for i in 0..m {
        total += joint_entropy_excluding(&grams, Some(i), order)?;
    }
    Ok(total)
}

/// `S_α(group) + S_α(single) − S_α(group ∪ single)`.
pub fn matrix_mutual_information(
    group: &[&DMatrix<f64>],
    single: &DMatrix<f64>,
    order: RenyiOrder,
    config: &KernelConfig,
) -> Result<f64> {
    let mut all: Vec<&DMatrix<f64>> = group.to_vec();
    all.push(single);
    check_aligned(&all)?;
    let grams = grams_of(&all, config)?;
    let last = grams.len() - 1;
    let group_refs: Vec<&GramMatrix> = grams[..last].iter().collect();
    let s_group = matrix_renyi_entropy(&hadamard_joint(&group_refs)?, order)?;
    let s_single = matrix_renyi_entropy(&grams[last], order)?;
    let s_all = joint_entropy_excluding(&grams, None, order)?;
    Ok(s_group + s_single - s_all)
}

/// DTC estimate together with the sandwich bounds built from the
/// `I(X_rest; X_i)` estimates of the same Gram matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtcBoundEstimate {
    pub dtc: f64,
    pub lower: f64,
    pub upper: f64,
    pub rest_mi: Vec<f64>,
}

impl DtcBoundEstimate {
    pub fn bound_ok(&self) -> bool {
        self.lower <= self.dtc && self.dtc <= self.upper
    }
}

/// Shares the `M + 1` joint entropies and `M` marginal entropies between the
/// DTC estimate and the `M` rest-vs-one mutual informations.
pub fn dtc_with_bounds(
    variables: &[&DMatrix<f64>],
    order: RenyiOrder,
    config: &KernelConfig,
) -> Result<DtcBoundEstimate> {
    let m = variables.len();
    if m < 3 {
        return Err(Error::Shape(format!("sandwich bounds need at least 3 variables, got {m}")));
    }
    check_aligned(variables)?;
    let grams = grams_of(variables, config)?;
    let s_all = joint_entropy_excluding(&grams, None, order)?;
    let mut dtc = -(m as f64 - 1.0) * s_all;
    let mut rest_mi = Vec::with_capacity(m);
    for i in 0..m {
        let s_rest = joint_entropy_excluding(&grams, Some(i), order)?;
        let s_i = matrix_renyi_entropy(&grams[i], order)?;
        dtc += s_rest;
        rest_mi.push(s_rest + s_i - s_all);
    }
    let sum: f64 = rest_mi.iter().sum();
    let mf = m as f64;
    Ok(DtcBoundEstimate { dtc, lower: sum / mf, upper: (mf - 1.0) / mf * sum, rest_mi })
}

/// Splits the columns of an `N × M` matrix into `M` scalar variables.
pub fn columns(samples: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (0..samples.ncols()).map(|j| DMatrix::from_column_slice(samples.nrows(), 1, samples.column(j).as_slice())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn two_point_gram() {
        let g = gram_matrix(&col(&[0.0, 1.5]), &KernelConfig::fixed(1.0).unwrap()).unwrap();
        let k = (-1.5f64 * 1.5 / 2.0).exp();
        let diag = 1.0 / 2.0;
        assert_abs_diff_eq!(g.entries()[(0, 0)], diag, epsilon = 1e-15);
        assert_abs_diff_eq!(g.entries()[(0, 1)], k / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.entries().trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_samples_fall_back() {
        let g = gram_matrix(&col(&[3.0; 5]), &KernelConfig::default()).unwrap();
        assert!(g.bandwidth_fallback());
        assert_eq!(g.bandwidth(), FALLBACK_BANDWIDTH);
        for v in g.entries().iter() {
            assert_abs_diff_eq!(*v, 0.2, epsilon = 1e-15);
        }
        let eig = linalg::sym_eigenvalues(g.entries()).unwrap();
        assert_abs_diff_eq!(eig[0], 1.0, epsilon = 1e-12);
        assert!(eig[1..].iter().all(|l| l.abs() < 1e-12));
        assert_abs_diff_eq!(matrix_renyi_entropy(&g, RenyiOrder::default()).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn random_gram_is_psd_unit_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let g = gram_matrix(&col(&xs), &KernelConfig::default()).unwrap();
        let e = g.entries();
        assert!((e - e.transpose()).amax() < 1e-12);
        assert_abs_diff_eq!(e.trace(), 1.0, epsilon = 1e-12);
        assert!(*linalg::sym_eigenvalues(e).unwrap().last().unwrap() >= -PSD_TOLERANCE);
    }

    #[test]
    fn too_few_samples() {
        assert!(gram_matrix(&col(&[1.0]), &KernelConfig::default()).is_err());
        assert!(KernelConfig::fixed(0.0).is_err());
        assert!(RenyiOrder::new(0.0).is_err());
    }

    #[test]
    fn uniform_spectrum_entropy() {
        let g = GramMatrix::from_unnormalized(DMatrix::identity(4, 4)).unwrap();
        for alpha in [0.5, 1.0, 1.01, 2.0, 5.0] {
            let s = matrix_renyi_entropy(&g, RenyiOrder::new(alpha).unwrap()).unwrap();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-12);
        }
        let ones = GramMatrix::from_unnormalized(DMatrix::from_element(4, 4, 1.0)).unwrap();
        assert_abs_diff_eq!(matrix_renyi_entropy(&ones, RenyiOrder::SHANNON).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(renyi_entropy_of_spectrum(&[0.5, 0.5], RenyiOrder::SHANNON), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hadamard_examples() {
        let a = GramMatrix::from_unnormalized(DMatrix::identity(4, 4)).unwrap();
        let single = hadamard_joint(&[&a]).unwrap();
        assert_eq!(single.entries(), a.entries());
        let joint = hadamard_joint(&[&a, &a]).unwrap();
        assert!((joint.entries() - a.entries()).amax() < 1e-15);
        assert_abs_diff_eq!(matrix_renyi_entropy(&joint, RenyiOrder::default()).unwrap(), 2.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let g = gram_matrix_scalar(&xs, &KernelConfig::default()).unwrap();
        let ones = GramMatrix::from_unnormalized(DMatrix::from_element(6, 6, 1.0)).unwrap();
        let h = hadamard_joint(&[&g, &ones]).unwrap();
        assert!((h.entries() - g.entries()).amax() < 1e-14);

        let b = GramMatrix::from_unnormalized(DMatrix::identity(3, 3)).unwrap();
        assert!(hadamard_joint(&[&a, &b]).is_err());
        assert!(hadamard_joint(&[]).is_err());
    }

    fn uniforms(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>())
    }

    #[test]
    fn independent_uniforms_have_small_dtc() {
        let (a, b, c) = (uniforms(500, 11), uniforms(500, 12), uniforms(500, 13));
        let dtc = dtc_alpha(&[&a, &b, &c], RenyiOrder::default(), &KernelConfig::default()).unwrap();
        assert!(dtc.abs() <= 0.15, "dtc = {dtc}");
        let mi = matrix_mutual_information(&[&a, &b], &c, RenyiOrder::default(), &KernelConfig::default()).unwrap();
        assert!(mi.abs() <= 0.15, "mi = {mi}");
    }

    // Duplicated variables: the Hadamard of k copies of a Gaussian Gram is the
    // Gram at bandwidth bw/√k, which gives an independent route to each joint.
    #[test]
    fn duplicated_variable_dtc() {
        let x = uniforms(60, 3);
        let order = RenyiOrder::default();
        let bw = median_distance(&x).unwrap();
        let s_at = |k: f64| {
            let g = gram_matrix(&x, &KernelConfig::fixed(bw / k.sqrt()).unwrap()).unwrap();
            matrix_renyi_entropy(&g, order).unwrap()
        };
        let expected = 3.0 * s_at(2.0) - 2.0 * s_at(3.0);
        let dtc = dtc_alpha(&[&x, &x, &x], order, &KernelConfig::default()).unwrap();
        assert_abs_diff_eq!(dtc, expected, epsilon = 1e-9);

        let mi = matrix_mutual_information(&[&x], &x, order, &KernelConfig::default()).unwrap();
        assert_abs_diff_eq!(mi, 2.0 * s_at(1.0) - s_at(2.0), epsilon = 1e-9);
    }

    #[test]
    fn two_variable_dtc_is_mutual_information() {
        let a = uniforms(80, 5);
        let b = a.map(|v| v * v + 0.1 * v);
        let order = RenyiOrder::default();
        let cfg = KernelConfig::default();
        let dtc = dtc_alpha(&[&a, &b], order, &cfg).unwrap();
        let mi = matrix_mutual_information(&[&a], &b, order, &cfg).unwrap();
        assert_abs_diff_eq!(dtc, mi, epsilon = 1e-12);
    }

    #[test]
    fn constant_single_carries_no_information() {
        let a = uniforms(50, 9);
        let c = DMatrix::from_element(50, 1, 0.3);
        let mi = matrix_mutual_information(&[&a], &c, RenyiOrder::default(), &KernelConfig::default()).unwrap();
        assert_abs_diff_eq!(mi, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn misaligned_variables() {
        let a = uniforms(10, 1);
        let b = uniforms(11, 2);
        assert!(dtc_alpha(&[&a, &b], RenyiOrder::default(), &KernelConfig::default()).is_err());
        assert!(matrix_mutual_information(&[&a], &b, RenyiOrder::default(), &KernelConfig::default()).is_err());
    }

    #[test]
    fn bounds_share_terms_with_dtc() {
        let vars: Vec<DMatrix<f64>> = (0..4).map(|s| uniforms(40, 20 + s)).collect();
        let refs: Vec<&DMatrix<f64>> = vars.iter().collect();
        let order = RenyiOrder::default();
        let cfg = KernelConfig::default();
        let est = dtc_with_bounds(&refs, order, &cfg).unwrap();
        assert_abs_diff_eq!(est.dtc, dtc_alpha(&refs, order, &cfg).unwrap(), epsilon = 1e-12);
        for i in 0..4 {
            let rest: Vec<&DMatrix<f64>> = refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let mi = matrix_mutual_information(&rest, refs[i], order, &cfg).unwrap();
            assert_abs_diff_eq!(est.rest_mi[i], mi, epsilon = 1e-12);
        }
    }

    #[test]
    fn columns_split() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = columns(&m);
        assert_eq!(c.len(), 3);
        assert_eq!(c[1].as_slice(), &[2.0, 5.0]);
    }
}
