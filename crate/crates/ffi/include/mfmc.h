#ifndef MFMC_H
#define MFMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  MFMC_STATUS_OK = 0,
  MFMC_STATUS_NULL_POINTER = 1,
  /**
   * Argument outside its domain, bad shape, or invalid configuration.
   */
  MFMC_STATUS_INVALID_ARGUMENT = 2,
  MFMC_STATUS_NON_FINITE = 3,
  MFMC_STATUS_SINGULAR_COVARIANCE = 4,
  MFMC_STATUS_NOT_POSITIVE_DEFINITE = 5,
  /**
   * Eigensolver failure or another numerical breakdown.
   */
  MFMC_STATUS_NUMERICAL = 6,
  /**
   * File, parse, or checkpoint-format failure.
   */
  MFMC_STATUS_IO = 7,
  /**
   * Output buffer too small.
   */
  MFMC_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  MFMC_STATUS_PANIC = 9,
} MfmcStatus;

/**
 * Multilayer perceptron parameters.
 */
typedef struct MfmcMlp MfmcMlp;

/**
 * Equicorrelated Gaussian, Data A, or Data B samples.
 */
typedef struct MfmcSamples MfmcSamples;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *mfmc_last_error(void);

/**
 * DTC of the three-variable equicorrelated Gaussian.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_gaussian_dtc3(double rho, double *out);

/**
 * `I(X_i, X_j; X_k)` of the three-variable equicorrelated Gaussian.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_gaussian_pair_third_mi3(double rho, double *out);

/**
 * `I(X_i; X_j | X_k)` of the three-variable equicorrelated Gaussian.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_gaussian_conditional_mi3(double rho, double *out);

/**
 * Mutual information of a bivariate Gaussian with correlation `rho`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_gaussian_pairwise_mi(double rho, double *out);

/**
 * Mutual information of `d` independent coordinate pairs, each with correlation `rho`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_gaussian_mi_multidim(size_t d, double rho, double *out);

/**
 * Sandwich bounds from `m >= 3` non-negative terms `I(rest; X_i)`.
 *
 * # Safety
 * `terms` must be valid for `m` reads; `lower` and `upper` for one write each.
 */
MfmcStatus mfmc_sandwich_bounds(const double *terms, size_t m, double *lower, double *upper);

/**
 * `n` draws of `m` unit-variance Gaussians with pairwise correlation `rho`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_samples_equicorrelated(size_t m,
                                       double rho,
                                       size_t n,
                                       uint64_t seed,
                                       MfmcSamples **out);

/**
 * Data A: the first column is the squared mean of `m - 1` uniform columns.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_samples_data_a(size_t m, size_t n, uint64_t seed, MfmcSamples **out);

/**
 * Data B: a uniform column followed by `m - 1` copies of `x² + x`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
MfmcStatus mfmc_samples_data_b(size_t m, size_t n, uint64_t seed, MfmcSamples **out);

/**
 * Number of samples (rows); 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t mfmc_samples_rows(const MfmcSamples *h);

/**
 * Number of variables (columns); 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t mfmc_samples_cols(const MfmcSamples *h);

/**
 * Copies the samples row-major into `buf`, which must hold `rows * cols` values.
 *
 * # Safety
 * `h` must be a live handle and `buf` valid for `len` writes.
 */
MfmcStatus mfmc_samples_copy(const MfmcSamples *h, double *buf, size_t len);

/**
 * # Safety
 * `h` must be null or a handle not yet freed.
 */
void mfmc_samples_free(MfmcSamples *h);

/**
 * DTC estimate over the columns of `h`. A `bandwidth <= 0` selects the
 * median heuristic.
 *
 * # Safety
 * `h` must be a live handle and `out` valid for one write.
 */
MfmcStatus mfmc_dtc(const MfmcSamples *h, double alpha, double bandwidth, double *out);

/**
 * DTC estimate with its sandwich bounds over the columns of `h`.
 *
 * # Safety
 * `h` must be a live handle; each output must be valid for one write.
 */
MfmcStatus mfmc_dtc_bounds(const MfmcSamples *h,
                           double alpha,
                           double bandwidth,
                           double *dtc,
                           double *lower,
                           double *upper);

/**
 * Trace objective `-Σσ` and, when the gradient pointers are non-null, its
 * gradients with respect to both batches.
 *
 * # Safety
 * `e1`, `e2` valid for `rows * cols` reads; `loss` for one write; gradient
 * pointers null or valid for `rows * cols` writes.
 */
MfmcStatus mfmc_trace_loss(const double *e1,
                           const double *e2,
                           size_t rows,
                           size_t cols,
                           double ridge,
                           bool centered,
                           double *loss,
                           double *grad1,
                           double *grad2);

/**
 * Log-det objective `Σ ln(1 − σ)` and optional gradients, as for [`mfmc_trace_loss`].
 *
 * # Safety
 * As for [`mfmc_trace_loss`].
 */
MfmcStatus mfmc_logdet_loss(const double *e1,
                            const double *e2,
                            size_t rows,
                            size_t cols,
                            double ridge,
                            bool centered,
                            double *loss,
                            double *grad1,
                            double *grad2);

/**
 * Correlation strengths of the pair, descending, into `sigmas[0..cols]`.
 *
 * # Safety
 * `e1`, `e2` valid for `rows * cols` reads; `sigmas` for `cols` writes.
 */
MfmcStatus mfmc_spectrum(const double *e1,
                         const double *e2,
                         size_t rows,
                         size_t cols,
                         double ridge,
                         bool centered,
                         double *sigmas);

/**
 * InfoNCE loss with cosine similarity at the given temperature.
 *
 * # Safety
 * `e1`, `e2` valid for `rows * cols` reads; `loss` for one write.
 */
MfmcStatus mfmc_infonce_loss(const double *e1,
                             const double *e2,
                             size_t rows,
                             size_t cols,
                             double temperature,
                             double *loss);

/**
 * Freshly initialised network with layer widths `widths[0..count]`.
 *
 * # Safety
 * `widths` valid for `count` reads; `out` for one write.
 */
MfmcStatus mfmc_mlp_init(const size_t *widths,
                         size_t count,
                         bool batch_norm,
                         uint64_t seed,
                         MfmcMlp **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
MfmcStatus mfmc_mlp_load(const char *path, MfmcMlp **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
MfmcStatus mfmc_mlp_save(const MfmcMlp *h, const char *path);

/**
 * Input width; 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t mfmc_mlp_input_width(const MfmcMlp *h);

/**
 * Output width; 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t mfmc_mlp_output_width(const MfmcMlp *h);

/**
 * Inference-mode forward pass of `rows` inputs; writes `rows * output_width` values.
 *
 * # Safety
 * `h` live; `x` valid for `rows * input_width` reads; `out` for `out_len` writes.
 */
MfmcStatus mfmc_mlp_forward(const MfmcMlp *h,
                            const double *x,
                            size_t rows,
                            double *out,
                            size_t out_len);

/**
 * # Safety
 * `h` must be null or a handle not yet freed.
 */
void mfmc_mlp_free(MfmcMlp *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFMC_H */
