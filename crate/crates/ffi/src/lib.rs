//! C ABI over `mfmc-core`.
//!
//! Every fallible function returns an [`MfmcStatus`]; on failure the message
//! is available from [`mfmc_last_error`] on the same thread. Matrices cross
//! the boundary as row-major `double` arrays. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mfmc_core::analytic;
use mfmc_core::data::{sample_data_a, sample_data_b, sample_equicorrelated, SampleMatrix};
use mfmc_core::encoders::{self, checkpoint, MlpParams, MlpSpec, Mode};
use mfmc_core::gram::{self, columns, Bandwidth, KernelConfig, RenyiOrder};
use mfmc_core::objectives::{self, ContrastiveConfig, CovarianceOptions};
use mfmc_core::Error;
use nalgebra::DMatrix;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfmcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside its domain, bad shape, or invalid configuration.
    InvalidArgument = 2,
    NonFinite = 3,
    SingularCovariance = 4,
    NotPositiveDefinite = 5,
    /// Eigensolver failure or another numerical breakdown.
    Numerical = 6,
    /// File, parse, or checkpoint-format failure.
    Io = 7,
    /// Output buffer too small.
    BufferTooSmall = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Equicorrelated Gaussian, Data A, or Data B samples.
pub struct MfmcSamples {
    inner: SampleMatrix,
}

/// Multilayer perceptron parameters.
pub struct MfmcMlp {
    inner: MlpParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Message of the most recent failure on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mfmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

struct Failure(MfmcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            "domain" | "shape" | "config" => MfmcStatus::InvalidArgument,
            "non-finite" => MfmcStatus::NonFinite,
            "singular-covariance" => MfmcStatus::SingularCovariance,
            "not-positive-definite" => MfmcStatus::NotPositiveDefinite,
            "checkpoint" | "io" => MfmcStatus::Io,
            _ => MfmcStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MfmcStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(MfmcStatus::NullPointer, format!("`{what}` is null"))
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> MfmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MfmcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MfmcStatus::Panic
        }
    }
}

fn write_out<T>(out: *mut T, value: T, name: &str) -> Outcome {
    if out.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null and, by contract, valid for a write of `T`.
    unsafe { out.write(value) };
    Ok(())
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `rows * cols` reads.
unsafe fn matrix(ptr: *const f64, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>, Failure> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(ptr, len, name)?))
}

/// Copies `m` row-major into `out` when `out` is non-null.
///
/// # Safety
/// `out` must be null or valid for `m.len()` writes.
unsafe fn write_matrix(out: *mut f64, m: &DMatrix<f64>) {
    if out.is_null() {
        return;
    }
    let dst = std::slice::from_raw_parts_mut(out, m.len());
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            dst[i * m.ncols() + j] = *v;
        }
    }
}

/// # Safety
/// `path` must be null or a NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

// ---------------------------------------------------------------------------
// Closed forms, in nats.

/// DTC of the three-variable equicorrelated Gaussian.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_gaussian_dtc3(rho: f64, out: *mut f64) -> MfmcStatus {
    guard(|| write_out(out, analytic::gaussian_dtc3(rho)?, "out"))
}

/// `I(X_i, X_j; X_k)` of the three-variable equicorrelated Gaussian.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_gaussian_pair_third_mi3(rho: f64, out: *mut f64) -> MfmcStatus {
    guard(|| write_out(out, analytic::gaussian_pair_third_mi3(rho)?, "out"))
}

/// `I(X_i; X_j | X_k)` of the three-variable equicorrelated Gaussian.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_gaussian_conditional_mi3(rho: f64, out: *mut f64) -> MfmcStatus {
    guard(|| write_out(out, analytic::gaussian_conditional_mi3(rho)?, "out"))
}

/// Mutual information of a bivariate Gaussian with correlation `rho`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_gaussian_pairwise_mi(rho: f64, out: *mut f64) -> MfmcStatus {
    guard(|| write_out(out, analytic::gaussian_pairwise_mi(rho)?, "out"))
}

/// Mutual information of `d` independent coordinate pairs, each with correlation `rho`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_gaussian_mi_multidim(d: usize, rho: f64, out: *mut f64) -> MfmcStatus {
    guard(|| write_out(out, analytic::gaussian_mi_multidim(d, rho)?, "out"))
}

/// Sandwich bounds from `m >= 3` non-negative terms `I(rest; X_i)`.
///
/// # Safety
/// `terms` must be valid for `m` reads; `lower` and `upper` for one write each.
#[no_mangle]
pub unsafe extern "C" fn mfmc_sandwich_bounds(
    terms: *const f64,
    m: usize,
    lower: *mut f64,
    upper: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let b = analytic::sandwich_bounds(slice(terms, m, "terms")?)?;
        write_out(lower, b.lower, "lower")?;
        write_out(upper, b.upper, "upper")
    })
}

// ---------------------------------------------------------------------------
// Sample matrices.

fn new_samples(out: *mut *mut MfmcSamples, s: mfmc_core::Result<SampleMatrix>) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    let boxed = Box::new(MfmcSamples { inner: s? });
    // SAFETY: checked non-null above.
    unsafe { out.write(Box::into_raw(boxed)) };
    Ok(())
}

/// `n` draws of `m` unit-variance Gaussians with pairwise correlation `rho`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_equicorrelated(
    m: usize,
    rho: f64,
    n: usize,
    seed: u64,
    out: *mut *mut MfmcSamples,
) -> MfmcStatus {
    guard(|| new_samples(out, sample_equicorrelated(m, rho, n, seed)))
}

/// Data A: the first column is the squared mean of `m - 1` uniform columns.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_data_a(m: usize, n: usize, seed: u64, out: *mut *mut MfmcSamples) -> MfmcStatus {
    guard(|| new_samples(out, sample_data_a(m, n, seed)))
}

/// Data B: a uniform column followed by `m - 1` copies of `x² + x`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_data_b(m: usize, n: usize, seed: u64, out: *mut *mut MfmcSamples) -> MfmcStatus {
    guard(|| new_samples(out, sample_data_b(m, n, seed)))
}

/// Number of samples (rows); 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_rows(h: *const MfmcSamples) -> usize {
    h.as_ref().map_or(0, |s| s.inner.n())
}

/// Number of variables (columns); 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_cols(h: *const MfmcSamples) -> usize {
    h.as_ref().map_or(0, |s| s.inner.m())
}

/// Copies the samples row-major into `buf`, which must hold `rows * cols` values.
///
/// # Safety
/// `h` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_copy(h: *const MfmcSamples, buf: *mut f64, len: usize) -> MfmcStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < s.inner.values.len() {
            return Err(Failure(
                MfmcStatus::BufferTooSmall,
                format!("need {} values, got {len}", s.inner.values.len()),
            ));
        }
        write_matrix(buf, &s.inner.values);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfmc_samples_free(h: *mut MfmcSamples) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

// ---------------------------------------------------------------------------
// Matrix-entropy dependence estimates, in bits.

fn kernel(bandwidth: f64) -> Result<KernelConfig, Failure> {
    if bandwidth > 0.0 {
        Ok(KernelConfig::fixed(bandwidth)?)
    } else {
        Ok(KernelConfig { bandwidth: Bandwidth::Median })
    }
}

/// DTC estimate over the columns of `h`. A `bandwidth <= 0` selects the
/// median heuristic.
///
/// # Safety
/// `h` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_dtc(h: *const MfmcSamples, alpha: f64, bandwidth: f64, out: *mut f64) -> MfmcStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        let vars = columns(&s.inner.values);
        let refs: Vec<_> = vars.iter().collect();
        let v = gram::dtc_alpha(&refs, RenyiOrder::new(alpha)?, &kernel(bandwidth)?)?;
        write_out(out, v, "out")
    })
}

/// DTC estimate with its sandwich bounds over the columns of `h`.
///
/// # Safety
/// `h` must be a live handle; each output must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_dtc_bounds(
    h: *const MfmcSamples,
    alpha: f64,
    bandwidth: f64,
    dtc: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        let vars = columns(&s.inner.values);
        let refs: Vec<_> = vars.iter().collect();
        let e = gram::dtc_with_bounds(&refs, RenyiOrder::new(alpha)?, &kernel(bandwidth)?)?;
        write_out(dtc, e.dtc, "dtc")?;
        write_out(lower, e.lower, "lower")?;
        write_out(upper, e.upper, "upper")
    })
}

// ---------------------------------------------------------------------------
// Objectives on `rows × cols` embedding batches.

/// Trace objective `-Σσ` and, when the gradient pointers are non-null, its
/// gradients with respect to both batches.
///
/// # Safety
/// `e1`, `e2` valid for `rows * cols` reads; `loss` for one write; gradient
/// pointers null or valid for `rows * cols` writes.
#[no_mangle]
pub unsafe extern "C" fn mfmc_trace_loss(
    e1: *const f64,
    e2: *const f64,
    rows: usize,
    cols: usize,
    ridge: f64,
    centered: bool,
    loss: *mut f64,
    grad1: *mut f64,
    grad2: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let a = matrix(e1, rows, cols, "e1")?;
        let b = matrix(e2, rows, cols, "e2")?;
        let l = objectives::trace_loss(&a, &b, &CovarianceOptions { ridge, centered })?;
        write_out(loss, l.loss, "loss")?;
        write_matrix(grad1, &l.grad_first);
        write_matrix(grad2, &l.grad_second);
        Ok(())
    })
}

/// Log-det objective `Σ ln(1 − σ)` and optional gradients, as for [`mfmc_trace_loss`].
///
/// # Safety
/// As for [`mfmc_trace_loss`].
#[no_mangle]
pub unsafe extern "C" fn mfmc_logdet_loss(
    e1: *const f64,
    e2: *const f64,
    rows: usize,
    cols: usize,
    ridge: f64,
    centered: bool,
    loss: *mut f64,
    grad1: *mut f64,
    grad2: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let a = matrix(e1, rows, cols, "e1")?;
        let b = matrix(e2, rows, cols, "e2")?;
        let l = objectives::logdet_loss(&a, &b, &CovarianceOptions { ridge, centered })?;
        write_out(loss, l.loss, "loss")?;
        write_matrix(grad1, &l.grad_first);
        write_matrix(grad2, &l.grad_second);
        Ok(())
    })
}

/// Correlation strengths of the pair, descending, into `sigmas[0..cols]`.
///
/// # Safety
/// `e1`, `e2` valid for `rows * cols` reads; `sigmas` for `cols` writes.
#[no_mangle]
pub unsafe extern "C" fn mfmc_spectrum(
    e1: *const f64,
    e2: *const f64,
    rows: usize,
    cols: usize,
    ridge: f64,
    centered: bool,
    sigmas: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let a = matrix(e1, rows, cols, "e1")?;
        let b = matrix(e2, rows, cols, "e2")?;
        let stats = objectives::batch_covariances_with(&a, &b, &CovarianceOptions { ridge, centered })?;
        let spec = objectives::spectrum(&stats)?;
        if sigmas.is_null() {
            return Err(null("sigmas"));
        }
        std::slice::from_raw_parts_mut(sigmas, cols).copy_from_slice(&spec.sigmas);
        Ok(())
    })
}

/// InfoNCE loss with cosine similarity at the given temperature.
///
/// # Safety
/// `e1`, `e2` valid for `rows * cols` reads; `loss` for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_infonce_loss(
    e1: *const f64,
    e2: *const f64,
    rows: usize,
    cols: usize,
    temperature: f64,
    loss: *mut f64,
) -> MfmcStatus {
    guard(|| {
        let a = matrix(e1, rows, cols, "e1")?;
        let b = matrix(e2, rows, cols, "e2")?;
        let l = objectives::infonce_loss(&a, &b, &ContrastiveConfig::new(temperature)?)?;
        write_out(loss, l.loss, "loss")
    })
}

// ---------------------------------------------------------------------------
// Encoders.

fn new_mlp(out: *mut *mut MfmcMlp, inner: MlpParams) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: checked non-null above.
    unsafe { out.write(Box::into_raw(Box::new(MfmcMlp { inner }))) };
    Ok(())
}

/// Freshly initialised network with layer widths `widths[0..count]`.
///
/// # Safety
/// `widths` valid for `count` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_init(
    widths: *const usize,
    count: usize,
    batch_norm: bool,
    seed: u64,
    out: *mut *mut MfmcMlp,
) -> MfmcStatus {
    guard(|| {
        if widths.is_null() {
            return Err(null("widths"));
        }
        let w = std::slice::from_raw_parts(widths, count).to_vec();
        let spec = MlpSpec::all_batch_norm(w, batch_norm)?;
        new_mlp(out, encoders::init_params(&spec, seed))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_load(path: *const c_char, out: *mut *mut MfmcMlp) -> MfmcStatus {
    guard(|| new_mlp(out, checkpoint::load(path_arg(path)?)?))
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_save(h: *const MfmcMlp, path: *const c_char) -> MfmcStatus {
    guard(|| {
        let m = h.as_ref().ok_or_else(|| null("handle"))?;
        Ok(checkpoint::save(&m.inner, path_arg(path)?)?)
    })
}

/// Input width; 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_input_width(h: *const MfmcMlp) -> usize {
    h.as_ref().map_or(0, |m| m.inner.spec.input_width())
}

/// Output width; 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_output_width(h: *const MfmcMlp) -> usize {
    h.as_ref().map_or(0, |m| m.inner.spec.output_width())
}

/// Inference-mode forward pass of `rows` inputs; writes `rows * output_width` values.
///
/// # Safety
/// `h` live; `x` valid for `rows * input_width` reads; `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_forward(
    h: *const MfmcMlp,
    x: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> MfmcStatus {
    guard(|| {
        let m = h.as_ref().ok_or_else(|| null("handle"))?;
        let input = matrix(x, rows, m.inner.spec.input_width(), "x")?;
        let (y, _) = encoders::forward(&m.inner, &input, Mode::Eval)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < y.len() {
            return Err(Failure(MfmcStatus::BufferTooSmall, format!("need {} values, got {out_len}", y.len())));
        }
        write_matrix(out, &y);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfmc_mlp_free(h: *mut MfmcMlp) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
