#ifndef SEAGLE_H
#define SEAGLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which p-values to compute: 0 Davies, 1 Liu, 2 both.
 */
#define SEAGLE_METHOD_DAVIES 0

#define SEAGLE_METHOD_LIU 1

#define SEAGLE_METHOD_BOTH 2

typedef enum SeagleStatus {
  SEAGLE_STATUS_OK = 0,
  SEAGLE_STATUS_NULL_POINTER = 1,
  SEAGLE_STATUS_INVALID_ARGUMENT = 2,
  SEAGLE_STATUS_SHAPE_MISMATCH = 3,
  SEAGLE_STATUS_RANK_DEFICIENT = 4,
  SEAGLE_STATUS_NOT_POSITIVE_DEFINITE = 5,
  SEAGLE_STATUS_NUMERICAL_FAILURE = 6,
  SEAGLE_STATUS_PANIC = 7,
  SEAGLE_STATUS_OTHER = 8,
} SeagleStatus;

typedef enum SeaglePvalueSource {
  SEAGLE_PVALUE_SOURCE_DAVIES = 0,
  SEAGLE_PVALUE_SOURCE_LIU = 1,
  SEAGLE_PVALUE_SOURCE_DEGENERATE = 2,
} SeaglePvalueSource;

/**
 * Validated test input (phenotype, design, environment column, genotypes).
 */
typedef struct SeagleInput SeagleInput;

/**
 * Outcome of one test.
 */
typedef struct SeagleResult SeagleResult;

typedef struct SeagleConfig {
  double rel_tol;
  size_t max_iter;
  double floor;
  int32_t method;
  double davies_acc;
  size_t davies_lim;
} SeagleConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next seagle call on the same thread.
 */
const char *seagle_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *seagle_version(void);

struct SeagleConfig seagle_config_default(void);

/**
 * Copy and validate a test input. `x` is `n x p` and `g` is `n x l`, both
 * column-major; `env_col` indexes the environment column of `x`.
 *
 * # Safety
 * Pointers must reference arrays of the stated sizes; `out` must be writable.
 */
enum SeagleStatus seagle_input_new(const double *y,
                                   size_t n,
                                   const double *x,
                                   size_t p,
                                   size_t env_col,
                                   const double *g,
                                   size_t l,
                                   struct SeagleInput **out);

/**
 * # Safety
 * `input` must come from `seagle_input_new` and not be freed twice.
 */
void seagle_input_free(struct SeagleInput *input);

/**
 * Fit the null model and run the interaction test. A null `config` means
 * defaults.
 *
 * # Safety
 * `input` must be a live handle; `out` must be writable.
 */
enum SeagleStatus seagle_run_test(const struct SeagleInput *input,
                                  const struct SeagleConfig *config,
                                  struct SeagleResult **out);

/**
 * # Safety
 * `result` must come from `seagle_run_test` and not be freed twice.
 */
void seagle_result_free(struct SeagleResult *result);

/**
 * Test statistic `T`; NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_statistic(const struct SeagleResult *result);

/**
 * Headline p-value (Davies, else Liu, 1 if degenerate).
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_p_value(const struct SeagleResult *result);

/**
 * Davies p-value, NaN if not computed or failed.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_p_davies(const struct SeagleResult *result);

/**
 * Liu p-value, NaN if not computed.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_p_liu(const struct SeagleResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
enum SeaglePvalueSource seagle_result_p_source(const struct SeagleResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_tau_hat(const struct SeagleResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
double seagle_result_sigma_hat(const struct SeagleResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t seagle_result_em_iterations(const struct SeagleResult *result);

/**
 * 1 if EM converged, 0 otherwise.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
int32_t seagle_result_converged(const struct SeagleResult *result);

/**
 * Number of retained eigenvalue weights.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t seagle_result_num_lambdas(const struct SeagleResult *result);

/**
 * Copy the weights (nonincreasing) into `buf`, which must hold at least
 * `seagle_result_num_lambdas` values.
 *
 * # Safety
 * `result` must be a live handle and `buf` writable for `len` doubles.
 */
enum SeagleStatus seagle_result_lambdas(const struct SeagleResult *result, double *buf, size_t len);

/**
 * `P(Q > q)` for `Q = sum lambda_j chi2_1` by Davies' method. `status_out`,
 * if non-null, receives the integration status code (0 = ok).
 *
 * # Safety
 * `lambdas` must hold `k` values; `p_out` must be writable.
 */
enum SeagleStatus seagle_pvalue_davies(double q,
                                       const double *lambdas,
                                       size_t k,
                                       double acc,
                                       size_t lim,
                                       double *p_out,
                                       int32_t *status_out);

/**
 * `P(Q > q)` by Liu's moment-matching approximation.
 *
 * # Safety
 * `lambdas` must hold `k` values; `p_out` must be writable.
 */
enum SeagleStatus seagle_pvalue_liu(double q, const double *lambdas, size_t k, double *p_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEAGLE_H */
