#ifndef CTXDRIFT_H
#define CTXDRIFT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CTXDRIFT_METHOD_ADITT 0

#define CTXDRIFT_METHOD_ADITE 1

#define CTXDRIFT_METHOD_MMD 2

#define CTXDRIFT_METHOD_MMD_SUB 3

/**
 * Result code of every fallible call.
 */
typedef enum CtxdriftStatus {
  CTXDRIFT_STATUS_OK = 0,
  CTXDRIFT_STATUS_NULL_POINTER = 1,
  CTXDRIFT_STATUS_CONFIG = 2,
  CTXDRIFT_STATUS_DEGENERATE_DATA = 3,
  CTXDRIFT_STATUS_NUMERICAL = 4,
  CTXDRIFT_STATUS_DEGENERATE_PROPENSITY = 5,
  CTXDRIFT_STATUS_RESAMPLE_FAILURE = 6,
  CTXDRIFT_STATUS_INPUT = 7,
  CTXDRIFT_STATUS_IO = 8,
  CTXDRIFT_STATUS_PANIC = 9,
} CtxdriftStatus;

/**
 * Opaque sample batch.
 */
typedef struct CtxdriftBatch CtxdriftBatch;

/**
 * Opaque detection report.
 */
typedef struct CtxdriftReport CtxdriftReport;

/**
 * Detector settings. Bandwidths `<= 0` select the median heuristic.
 */
typedef struct CtxdriftConfig {
  /**
   * One of the `CTXDRIFT_METHOD_*` constants.
   */
  uint32_t method;
  size_t n_perm;
  double holdout_fraction;
  double lambda0;
  double lambda1;
  /**
   * Nonzero: cross-validate both regularisers (5 folds).
   */
  uint8_t tune_lambda;
  double propensity_reg;
  /**
   * Nonzero: use the smoothed `(1 + #>=) / (1 + n_perm)` p-value.
   */
  uint8_t smoothed_p_value;
  uint64_t seed;
  double k_bandwidth;
  double l_bandwidth;
} CtxdriftConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ctxdrift_last_error_message(void);

/**
 * Build a batch from row-major reference (`n0` rows) and deployment (`n1`
 * rows) arrays with `d` statistic and `q` context columns. Context pointers
 * may be null when `q == 0`.
 *
 * # Safety
 * Non-null pointers must reference the stated number of doubles; `out` must
 * be a valid pointer.
 */
enum CtxdriftStatus ctxdrift_batch_new(const double *ref_statistics,
                                       const double *ref_contexts,
                                       size_t n0,
                                       const double *dep_statistics,
                                       const double *dep_contexts,
                                       size_t n1,
                                       size_t d,
                                       size_t q,
                                       struct CtxdriftBatch **out);

/**
 * Number of rows in the batch (0 for null).
 *
 * # Safety
 * `batch` must be null or a live handle from [`ctxdrift_batch_new`].
 */
size_t ctxdrift_batch_len(const struct CtxdriftBatch *batch);

/**
 * # Safety
 * `batch` must be null or a live handle; it is invalid afterwards.
 */
void ctxdrift_batch_free(struct CtxdriftBatch *batch);

/**
 * Library defaults: ADiTT, 100 permutations, 25% holdout, lambda 1e-3,
 * median-heuristic bandwidths, seed 0.
 */
struct CtxdriftConfig ctxdrift_config_default(void);

/**
 * Run the configured detector on `batch`.
 *
 * # Safety
 * `batch` must be a live handle, `config` and `out` valid pointers.
 */
enum CtxdriftStatus ctxdrift_detect(const struct CtxdriftBatch *batch,
                                    const struct CtxdriftConfig *config,
                                    struct CtxdriftReport **out);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
double ctxdrift_report_statistic(const struct CtxdriftReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
double ctxdrift_report_p_value(const struct CtxdriftReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
size_t ctxdrift_report_n_perm(const struct CtxdriftReport *report);

/**
 * Copy up to `capacity` permuted statistics into `buf`; returns the total
 * count, so a call with `capacity == 0` queries the length.
 *
 * # Safety
 * `report` must be null or a live handle; `buf` must hold `capacity` doubles.
 */
size_t ctxdrift_report_permuted_statistics(const struct CtxdriftReport *report,
                                           double *buf,
                                           size_t capacity);

/**
 * Report as a JSON document; release with [`ctxdrift_string_free`]. Null on
 * failure.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *ctxdrift_report_to_json(const struct CtxdriftReport *report);

/**
 * # Safety
 * `report` must be null or a live handle; it is invalid afterwards.
 */
void ctxdrift_report_free(struct CtxdriftReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void ctxdrift_string_free(char *s);

/**
 * KS distance between the empirical CDF of `n` p-values and U[0,1].
 *
 * # Safety
 * `p_values` must hold `n` doubles; `out` must be valid.
 */
enum CtxdriftStatus ctxdrift_ks_to_uniform(const double *p_values, size_t n, double *out);

/**
 * ROC AUC of drift against null p-values (ties count one half).
 *
 * # Safety
 * Arrays must hold the stated number of doubles; `out` must be valid.
 */
enum CtxdriftStatus ctxdrift_pvalue_auc(const double *null_p,
                                        size_t n_null,
                                        const double *drift_p,
                                        size_t n_drift,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXDRIFT_H */
