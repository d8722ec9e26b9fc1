#ifndef HOMOGNET_H
#define HOMOGNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgStatus {
  HG_STATUS_OK = 0,
  HG_STATUS_NULL_POINTER = 1,
  HG_STATUS_ARGUMENT = 2,
  HG_STATUS_DIMENSION = 3,
  HG_STATUS_NON_FINITE = 4,
  HG_STATUS_CONSTRAINT = 5,
  HG_STATUS_STALLED_DESCENT = 6,
  HG_STATUS_INFEASIBLE_REGULARIZER = 7,
  HG_STATUS_IO = 8,
  HG_STATUS_PANIC = 9,
} HgStatus;

typedef enum HgFamily {
  HG_FAMILY_MATRIX_SENSING = 0,
  HG_FAMILY_STRUCTURED_MATRIX_SENSING = 1,
  HG_FAMILY_TWO_LAYER_LINEAR = 2,
  HG_FAMILY_TWO_LAYER_RELU = 3,
  HG_FAMILY_MULTI_HEAD_ATTENTION = 4,
} HgFamily;

typedef enum HgVerdict {
  HG_VERDICT_CERTIFIED_GLOBAL = 0,
  HG_VERDICT_HEURISTIC_STATIONARY_GLOBAL = 1,
  HG_VERDICT_NOT_OPTIMAL = 2,
  HG_VERDICT_INDETERMINATE = 3,
} HgVerdict;

typedef struct HgDataset HgDataset;

typedef struct HgModel HgModel;

/**
 * Family descriptor. `gauge_s` is read for structured sensing, `tokens` and
 * `temperature` for attention.
 */
typedef struct HgFamilySpec {
  enum HgFamily family;
  size_t m;
  size_t n;
  size_t tokens;
  double temperature;
  double gauge_s;
} HgFamilySpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hg_last_error_message(void);

/**
 * Sample `n_samples` pairs from a Gaussian teacher of rank `rank` and noise `sigma`.
 *
 * # Safety
 * `spec` must point to a valid [`HgFamilySpec`] and `out` to writable storage.
 */
enum HgStatus hg_dataset_generate(const struct HgFamilySpec *spec,
                                  size_t rank,
                                  double sigma,
                                  size_t n_samples,
                                  uint64_t seed,
                                  struct HgDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from [`hg_dataset_generate`] not yet freed.
 */
void hg_dataset_free(struct HgDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle or NULL (returns 0).
 */
size_t hg_dataset_len(const struct HgDataset *ds);

/**
 * Width-growing training. Writes the model handle, the final polar value and its verdict.
 *
 * # Safety
 * `ds` must be a live dataset handle; the out pointers must be writable.
 */
enum HgStatus hg_meta_train(const struct HgDataset *ds,
                            double lambda,
                            size_t max_width,
                            uint64_t seed,
                            struct HgModel **out_model,
                            double *out_polar,
                            enum HgVerdict *out_verdict);

/**
 * Random model with each factor at `theta = init_scale`.
 *
 * # Safety
 * `spec` must point to a valid [`HgFamilySpec`] and `out` to writable storage.
 */
enum HgStatus hg_model_random(const struct HgFamilySpec *spec,
                              size_t width,
                              double init_scale,
                              double lambda,
                              uint64_t seed,
                              struct HgModel **out);

/**
 * # Safety
 * `m` must be NULL or a model handle not yet freed.
 */
void hg_model_free(struct HgModel *m);

/**
 * # Safety
 * `m` must be a live model handle or NULL (returns 0).
 */
size_t hg_model_width(const struct HgModel *m);

/**
 * Regularized empirical objective.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum HgStatus hg_model_objective(const struct HgDataset *ds, const struct HgModel *m, double *out);

/**
 * Largest per-factor stationarity residual.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum HgStatus hg_model_max_residual(const struct HgDataset *ds,
                                    const struct HgModel *m,
                                    double *out);

/**
 * Polar value and verdict at the model's own lambda.
 *
 * # Safety
 * Handles must be live; out pointers must be writable.
 */
enum HgStatus hg_polar(const struct HgDataset *ds,
                       const struct HgModel *m,
                       double *out_value,
                       enum HgVerdict *out_verdict);

/**
 * Total of the generalization bound report; `g_radius <= 0` selects the default schedule.
 *
 * # Safety
 * Handles must be live; `out_total` must be writable.
 */
enum HgStatus hg_bound_total(const struct HgDataset *ds,
                             const struct HgModel *m,
                             double delta,
                             double g_radius,
                             double *out_total);

/**
 * Variational nuclear norm of a column-major `rows x cols` matrix at width `width`.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
enum HgStatus hg_nuclear_variational(const double *data,
                                     size_t rows,
                                     size_t cols,
                                     size_t width,
                                     double *out);

/**
 * Model as a JSON string; release with [`hg_string_free`].
 *
 * # Safety
 * `m` must be a live model handle; `out` must be writable.
 */
enum HgStatus hg_model_to_json(const struct HgModel *m, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void hg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMOGNET_H */
