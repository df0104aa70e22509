#ifndef CS_FFI_H
#define CS_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CS_OK 0

#define CS_ERR_INVALID_DIMENSION 1

#define CS_ERR_INVALID_SPARSITY 2

#define CS_ERR_INVALID_PARAMETER 3

#define CS_ERR_RESOURCE_LIMIT 4

#define CS_ERR_ILL_CONDITIONED 5

#define CS_ERR_DIVERGED 6

#define CS_ERR_UNDEFINED_METRIC 7

#define CS_ERR_INVALID_CONFIG 8

#define CS_ERR_IO 9

#define CS_ERR_NULL_POINTER 100

#define CS_ERR_PANIC 101

/**
 * Entry law for random seeds and dense matrices.
 */
typedef enum CsDistribution {
  CS_GAUSSIAN = 0,
  CS_BERNOULLI = 1,
} CsDistribution;

/**
 * Opaque measurement operator.
 */
typedef struct CsOperator CsOperator;

/**
 * Scalar outputs of a reconstruction.
 */
typedef struct CsReconInfo {
  /**
   * NaN when the solver does not estimate it.
   */
  double noise_variance;
  size_t support_size;
  size_t raw_support_size;
  size_t iterations;
  /**
   * 1 when the stopping rule was met before the iteration cap.
   */
  int32_t converged;
  double recovery_time_s;
} CsReconInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length
 * excluding the terminator; call with `len = 0` to size the buffer.
 *
 * # Safety
 * `buf` must point to `len` writable bytes when `len > 0`.
 */
size_t cs_last_error_message(char *buf, size_t len);

/**
 * Partial circulant operator from an explicit seed vector `c` (length
 * `n`) and strictly increasing row indices (length `m`). Entry `(i, j)` is
 * `scale * c[(j - rows[i]) mod n]`; pass `scale <= 0` for `1/sqrt(m)`.
 *
 * # Safety
 * `c` and `rows` must point to `n` and `m` readable elements; `out` must be
 * writable.
 */
int32_t cs_operator_circulant(const double *c,
                              size_t n,
                              const size_t *rows,
                              size_t m,
                              double scale,
                              struct CsOperator **out);

/**
 * Random partial circulant operator: seed entries drawn from `dist`, `m`
 * rows chosen uniformly without replacement, scale `1/sqrt(m)`. The same
 * `rng_seed` always gives the same operator.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t cs_operator_circulant_random(size_t n,
                                     size_t m,
                                     enum CsDistribution dist,
                                     uint64_t rng_seed,
                                     struct CsOperator **out);

/**
 * Random dense `m x n` operator with i.i.d. entries from `dist`, scaled by
 * `1/sqrt(m)`.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t cs_operator_dense_random(size_t m,
                                 size_t n,
                                 enum CsDistribution dist,
                                 uint64_t rng_seed,
                                 struct CsOperator **out);

/**
 * Releases an operator. NULL is ignored.
 *
 * # Safety
 * `op` must come from a `cs_operator_*` constructor and not be used again.
 */
void cs_operator_free(struct CsOperator *op);

/**
 * Number of measurements (rows); 0 for NULL.
 *
 * # Safety
 * `op` must be NULL or a live operator.
 */
size_t cs_operator_m(const struct CsOperator *op);

/**
 * Signal length (columns); 0 for NULL.
 *
 * # Safety
 * `op` must be NULL or a live operator.
 */
size_t cs_operator_n(const struct CsOperator *op);

/**
 * `y = Phi x`.
 *
 * # Safety
 * `x` must hold `x_len` readable and `y` `y_len` writable doubles.
 */
int32_t cs_operator_apply(const struct CsOperator *op,
                          const double *x,
                          size_t x_len,
                          double *y,
                          size_t y_len);

/**
 * `x = Phi^T y`.
 *
 * # Safety
 * `y` must hold `y_len` readable and `x` `x_len` writable doubles.
 */
int32_t cs_operator_adjoint(const struct CsOperator *op,
                            const double *y,
                            size_t y_len,
                            double *x,
                            size_t x_len);

/**
 * Writes the operator as a row-major `m x n` matrix into `out`.
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
int32_t cs_operator_to_dense(const struct CsOperator *op, double *out, size_t len);

/**
 * Sparse Bayesian reconstruction. `noise_sigma` is the known measurement
 * noise level, or NaN when unknown. `info` may be NULL.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `config_json` must be NULL
 * or a NUL-terminated string.
 */
int32_t cs_reconstruct_bayes(const struct CsOperator *op,
                             const double *r,
                             size_t r_len,
                             double noise_sigma,
                             const char *config_json,
                             double *estimate,
                             size_t estimate_len,
                             struct CsReconInfo *info);

/**
 * L1-regularized least squares. Arguments as for `cs_reconstruct_bayes`.
 *
 * # Safety
 * As for `cs_reconstruct_bayes`.
 */
int32_t cs_reconstruct_bp(const struct CsOperator *op,
                          const double *r,
                          size_t r_len,
                          double noise_sigma,
                          const char *config_json,
                          double *estimate,
                          size_t estimate_len,
                          struct CsReconInfo *info);

/**
 * `||s_hat - s|| / ||s||`.
 *
 * # Safety
 * `s` and `s_hat` must hold `n` doubles; `out` must be writable.
 */
int32_t cs_reconstruction_error(const double *s, const double *s_hat, size_t n, double *out);

/**
 * Mean of the squared differences.
 *
 * # Safety
 * As for `cs_reconstruction_error`.
 */
int32_t cs_mean_square_error(const double *s, const double *s_hat, size_t n, double *out);

/**
 * Pearson correlation. Returns `CS_ERR_UNDEFINED_METRIC` when either
 * input is constant.
 *
 * # Safety
 * As for `cs_reconstruction_error`.
 */
int32_t cs_correlation(const double *s, const double *s_hat, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CS_FFI_H */
