#ifndef SUPMEAN_H
#define SUPMEAN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SupmeanStatus {
  SUPMEAN_STATUS_OK = 0,
  SUPMEAN_STATUS_INVALID_ARGUMENT = 1,
  SUPMEAN_STATUS_NUMERICAL_FAILURE = 2,
  SUPMEAN_STATUS_ILL_CONDITIONED_WINDOW = 3,
  SUPMEAN_STATUS_DEGENERATE_WINDOW = 4,
  SUPMEAN_STATUS_NO_VALID_BANDWIDTH = 5,
  SUPMEAN_STATUS_PARSE_ERROR = 6,
  SUPMEAN_STATUS_INVALID_DATA = 7,
  SUPMEAN_STATUS_IO_ERROR = 8,
  SUPMEAN_STATUS_NULL_POINTER = 9,
  SUPMEAN_STATUS_PANIC = 10,
} SupmeanStatus;

typedef enum SupmeanEstimatorKind {
  SUPMEAN_ESTIMATOR_KIND_LOCAL_POLYNOMIAL = 0,
  SUPMEAN_ESTIMATOR_KIND_INTERPOLATION = 1,
} SupmeanEstimatorKind;

typedef enum SupmeanKernel {
  SUPMEAN_KERNEL_EPANECHNIKOV = 0,
  SUPMEAN_KERNEL_TRIANGULAR = 1,
} SupmeanKernel;

typedef enum SupmeanBranch {
  SUPMEAN_BRANCH_DISCRETIZATION = 0,
  SUPMEAN_BRANCH_INTERMEDIATE = 1,
  SUPMEAN_BRANCH_PARAMETRIC = 2,
} SupmeanBranch;

typedef enum SupmeanRegime {
  SUPMEAN_REGIME_SPARSE = 0,
  SUPMEAN_REGIME_INTERMEDIATE = 1,
  SUPMEAN_REGIME_DENSE = 2,
} SupmeanRegime;

/**
 * Opaque curve dataset.
 */
typedef struct SupmeanDataset SupmeanDataset;

/**
 * Opaque design grid.
 */
typedef struct SupmeanGrid SupmeanGrid;

/**
 * Estimator settings; `degree`, `kernel` and `h` are ignored for interpolation.
 */
typedef struct SupmeanEstimator {
  enum SupmeanEstimatorKind kind;
  uint32_t degree;
  enum SupmeanKernel kernel;
  double h;
} SupmeanEstimator;

/**
 * Optimal bandwidth, optimal rate with its binding term, and regime.
 */
typedef struct SupmeanRates {
  double h_star;
  bool floor_binds;
  double rate;
  double rate_terms[3];
  enum SupmeanBranch binding;
  enum SupmeanRegime regime;
  double sparse_threshold;
  double dense_threshold;
} SupmeanRates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *supmean_last_error(void);

/**
 * Uniform grid with `counts[k]` points `(i - 0.5)/p_k` on axis `k`.
 *
 * # Safety
 * `counts` must point to `d` values and `out` must be writable.
 */
enum SupmeanStatus supmean_grid_uniform(const size_t *counts, size_t d, struct SupmeanGrid **out);

/**
 * Grid from per-axis coordinates concatenated axis after axis.
 *
 * # Safety
 * `counts` must point to `d` values, `coords` to their sum, and `out` must
 * be writable.
 */
enum SupmeanStatus supmean_grid_from_axes(const size_t *counts,
                                          size_t d,
                                          const double *coords,
                                          struct SupmeanGrid **out);

/**
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void supmean_grid_free(struct SupmeanGrid *grid);

/**
 * Number of design points, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t supmean_grid_total_points(const struct SupmeanGrid *grid);

/**
 * Dataset of `n` curves on a copy of `grid`; `values` is `n x p1`
 * row-major with NaN for missing observations.
 *
 * # Safety
 * `grid` must be a live handle, `values` must hold `n * p1` values and
 * `out` must be writable.
 */
enum SupmeanStatus supmean_dataset_new(const struct SupmeanGrid *grid,
                                       size_t n,
                                       const double *values,
                                       struct SupmeanDataset **out);

/**
 * Reads a CSV dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum SupmeanStatus supmean_dataset_read(const char *path, struct SupmeanDataset **out);

/**
 * Writes a dataset as CSV with full precision.
 *
 * # Safety
 * `dataset` must be a live handle and `path` a NUL-terminated string.
 */
enum SupmeanStatus supmean_dataset_write(const struct SupmeanDataset *dataset, const char *path);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void supmean_dataset_free(struct SupmeanDataset *dataset);

/**
 * Number of curves, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t supmean_dataset_n(const struct SupmeanDataset *dataset);

/**
 * Number of design points, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t supmean_dataset_design_len(const struct SupmeanDataset *dataset);

/**
 * Copies the per-column mean curve into `out` (length `p1`).
 *
 * # Safety
 * `dataset` must be a live handle and `out` must hold `p1` values.
 */
enum SupmeanStatus supmean_dataset_mean(const struct SupmeanDataset *dataset, double *out);

/**
 * Evaluates the mean estimate at `n_eval` points (`n_eval x d` row-major
 * coordinates) and writes the values to `values_out`.
 *
 * # Safety
 * `dataset` must be a live handle, `estimator` readable, `eval_points`
 * must hold `n_eval * d` values and `values_out` `n_eval` values.
 */
enum SupmeanStatus supmean_estimate(const struct SupmeanDataset *dataset,
                                    const struct SupmeanEstimator *estimator,
                                    const double *eval_points,
                                    size_t n_eval,
                                    double *values_out);

/**
 * Optimal bandwidth, rate and regime for `n` curves on `p[0] x .. x p[d-1]`
 * points with smoothness `alpha` and bandwidth-floor constant `c`.
 *
 * # Safety
 * `p` must point to `d` values and `out` must be writable.
 */
enum SupmeanStatus supmean_rates(size_t n,
                                 const size_t *p,
                                 size_t d,
                                 double alpha,
                                 double c,
                                 struct SupmeanRates *out);

/**
 * Leave-one-curve-out cross-validation over `n_h` increasing bandwidths.
 * `scores_out[k]` receives the score of `hs[k]` (NaN when the weights are
 * ill-conditioned) and `best_h_out` the selected bandwidth.
 *
 * # Safety
 * `dataset` must be a live handle, `hs` and `scores_out` must hold `n_h`
 * values and `best_h_out` must be writable.
 */
enum SupmeanStatus supmean_loocv(const struct SupmeanDataset *dataset,
                                 uint32_t degree,
                                 enum SupmeanKernel kernel,
                                 const double *hs,
                                 size_t n_h,
                                 double *scores_out,
                                 double *best_h_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPMEAN_H */
