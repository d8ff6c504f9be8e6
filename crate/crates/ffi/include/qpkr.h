#ifndef QPKR_H
#define QPKR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum QpkrStatus {
  QPKR_STATUS_OK = 0,
  QPKR_STATUS_NULL_POINTER = 1,
  QPKR_STATUS_INVALID_ARGUMENT = 2,
  QPKR_STATUS_CONFIG = 3,
  QPKR_STATUS_RANGE = 4,
  QPKR_STATUS_DEGENERATE = 5,
  QPKR_STATUS_NON_CONVERGENCE = 6,
  QPKR_STATUS_GRID_OVERFLOW = 7,
  QPKR_STATUS_MANIFEST = 8,
  QPKR_STATUS_IO = 9,
  QPKR_STATUS_PARSE = 10,
  QPKR_STATUS_PANIC = 11,
} QpkrStatus;

/**
 * Observable columns of an ensemble series.
 */
typedef enum QpkrColumn {
  QPKR_COLUMN_P2 = 0,
  QPKR_COLUMN_P2_ERR = 1,
  QPKR_COLUMN_PI0 = 2,
  QPKR_COLUMN_PI0_ERR = 3,
} QpkrColumn;

/**
 * Opaque parameter set.
 */
typedef struct QpkrParams QpkrParams;

/**
 * Opaque ensemble-averaged series.
 */
typedef struct QpkrSeries QpkrSeries;

/**
 * Weighted mean of exponents.
 */
typedef struct QpkrWeightedMean {
  double mean;
  double mean_err;
  double spread;
  double chi2;
} QpkrWeightedMean;

/**
 * Result of a critical fit `1/ξ = α|q − q_c|^ν + β`.
 */
typedef struct QpkrCriticalFit {
  double q_c;
  double nu;
  double alpha;
  double beta;
  double q_c_err;
  double nu_err;
  double chi2_per_dof;
  size_t n_points;
} QpkrCriticalFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *qpkr_last_error(void);

/**
 * Library version as a static string.
 */
const char *qpkr_version(void);

/**
 * Built-in parameter set `A`..`I`.
 *
 * # Safety
 * `label` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QpkrStatus qpkr_params_preset(const char *label, struct QpkrParams **out);

/**
 * Parameter set from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QpkrStatus qpkr_params_from_toml(const char *text, struct QpkrParams **out);

/**
 * # Safety
 * `params` must come from a constructor above, or be null.
 */
void qpkr_params_free(struct QpkrParams *params);

/**
 * # Safety
 * `params` must be a live handle.
 */
enum QpkrStatus qpkr_params_set_kicks(struct QpkrParams *params, size_t n_kicks);

/**
 * Effective Planck constant of the set, NaN for a null handle.
 *
 * # Safety
 * `params` must be a live handle or null.
 */
double qpkr_params_kbar(const struct QpkrParams *params);

/**
 * Kick strength `K·[1 + ε cos(ω₂n + φ₂) cos(ω₃n + φ₃)]`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum QpkrStatus qpkr_kick_amplitude(const struct QpkrParams *params,
                                    double k,
                                    double eps,
                                    uint64_t n,
                                    double *out);

/**
 * Ensemble run at one control point. `grid_m = 0` selects the default
 * lattice; `random_phases` is a boolean.
 *
 * # Safety
 * `params` must be a live handle, `times` must hold `n_times` values and
 * `out` must be a valid pointer.
 */
enum QpkrStatus qpkr_run_ensemble(const struct QpkrParams *params,
                                  double k,
                                  double eps,
                                  const size_t *times,
                                  size_t n_times,
                                  size_t n_realizations,
                                  uint64_t seed,
                                  int random_phases,
                                  size_t grid_m,
                                  struct QpkrSeries **out);

/**
 * Number of recorded times, 0 for a null handle.
 *
 * # Safety
 * `series` must be a live handle or null.
 */
size_t qpkr_series_len(const struct QpkrSeries *series);

/**
 * Copy the recording times into `buf`, which must hold `len` values.
 *
 * # Safety
 * `series` must be a live handle and `buf` writable for `len` values.
 */
enum QpkrStatus qpkr_series_times(const struct QpkrSeries *series, size_t *buf, size_t len);

/**
 * Copy one observable column into `buf`, which must hold `len` values.
 *
 * # Safety
 * `series` must be a live handle and `buf` writable for `len` values.
 */
enum QpkrStatus qpkr_series_column(const struct QpkrSeries *series,
                                   enum QpkrColumn column,
                                   double *buf,
                                   size_t len);

/**
 * # Safety
 * `series` must come from `qpkr_run_ensemble`, or be null.
 */
void qpkr_series_free(struct QpkrSeries *series);

/**
 * Inverse-variance weighted mean of `n ≥ 2` exponents.
 *
 * # Safety
 * `nu` and `sigma` must hold `n` values; `out` must be a valid pointer.
 */
enum QpkrStatus qpkr_weighted_mean(const double *nu,
                                   const double *sigma,
                                   size_t n,
                                   struct QpkrWeightedMean *out);

/**
 * Fit the critical law to `n` points `(q, ξ, σ(ln ξ))`; `localized[i]`
 * is nonzero on the localized side. The search starts from `q_c0`.
 *
 * # Safety
 * The four arrays must hold `n` values; `out` must be a valid pointer.
 */
enum QpkrStatus qpkr_fit_critical(const double *q,
                                  const double *xi,
                                  const double *ln_xi_err,
                                  const int *localized,
                                  size_t n,
                                  double q_c0,
                                  struct QpkrCriticalFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPKR_H */
