/* Generated by cbindgen; do not edit. */

#ifndef OVB_IV_H
#define OVB_IV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OvbStatus {
  OVB_STATUS_OK = 0,
  OVB_STATUS_NULL_POINTER = 1,
  OVB_STATUS_INVALID_INPUT = 2,
  OVB_STATUS_VALIDATION = 3,
  OVB_STATUS_MISSING_COLUMN = 4,
  OVB_STATUS_NUMERICAL = 5,
  OVB_STATUS_SOLVER = 6,
  OVB_STATUS_CONFIG = 7,
  OVB_STATUS_IO = 8,
  OVB_STATUS_PARSE = 9,
  OVB_STATUS_PANIC = 10,
} OvbStatus;

typedef enum OvbEstimand {
  OVB_ESTIMAND_LATE = 0,
  OVB_ESTIMAND_LATT = 1,
  OVB_ESTIMAND_PLIVM = 2,
} OvbEstimand;

typedef enum OvbLearner {
  OVB_LEARNER_RANDOM_FOREST = 0,
  OVB_LEARNER_RIDGE = 1,
  OVB_LEARNER_SATURATED_CELLS = 2,
} OvbLearner;

typedef enum OvbThetaSetKind {
  /**
   * `[a, b]`.
   */
  OVB_THETA_SET_KIND_INTERVAL = 0,
  /**
   * `(-inf, a] U [b, inf)`.
   */
  OVB_THETA_SET_KIND_UNION_OF_RAYS = 1,
  OVB_THETA_SET_KIND_WHOLE_LINE = 2,
  OVB_THETA_SET_KIND_UNDEFINED = 3,
} OvbThetaSetKind;

typedef enum OvbTarget {
  OVB_TARGET_LAMBDA = 0,
  OVB_TARGET_GAMMA = 1,
} OvbTarget;

/**
 * Opaque dataset handle.
 */
typedef struct OvbDataset OvbDataset;

/**
 * Opaque handle to short-version estimates.
 */
typedef struct OvbEstimates OvbEstimates;

typedef struct OvbFitOptions {
  enum OvbEstimand estimand;
  enum OvbLearner learner;
  size_t k_folds;
  /**
   * Sample splits combined by the median method.
   */
  size_t reps;
  uint64_t seed;
  /**
   * Trees per forest; ignored by the other learners.
   */
  size_t trees;
} OvbFitOptions;

typedef struct OvbSummary {
  size_t n;
  double lambda_s;
  double gamma_s;
  /**
   * NaN when `gamma_s` is zero.
   */
  double theta_s;
  double se_lambda;
  double se_gamma;
  double se_theta;
  double v_s2;
  double sigma_ys2;
  double sigma_ds2;
} OvbSummary;

typedef struct OvbSensitivity {
  double c_alpha;
  double c_y;
  double c_d;
  double rho_y;
  double rho_d;
} OvbSensitivity;

typedef struct OvbThetaSet {
  enum OvbThetaSetKind kind;
  double a;
  double b;
  /**
   * The gamma bounds contain zero.
   */
  bool first_stage_failure;
} OvbThetaSet;

typedef struct OvbBounds {
  double lambda_lo;
  double lambda_hi;
  double gamma_lo;
  double gamma_hi;
  struct OvbThetaSet theta;
} OvbBounds;

typedef struct OvbInterval {
  double lo;
  double hi;
} OvbInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *ovb_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *ovb_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void ovb_string_free(char *s);

/**
 * Reads a CSV with columns `y`, `d`, `z` and covariates.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum OvbStatus ovb_dataset_from_csv(const char *path, struct OvbDataset **out);

/**
 * Builds a dataset from arrays; `x` is row-major `n x p`, covariates are
 * named `x1..xp`.
 *
 * # Safety
 * `y`, `d`, `z` must point to `n` values, `x` to `n * p` values (or be
 * NULL when `p == 0`), and `out` must be valid.
 */
enum OvbStatus ovb_dataset_new(size_t n,
                               size_t p,
                               const double *y,
                               const double *d,
                               const double *z,
                               const double *x,
                               struct OvbDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from this library, freed once.
 */
void ovb_dataset_free(struct OvbDataset *ds);

/**
 * Number of rows, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a valid handle.
 */
size_t ovb_dataset_rows(const struct OvbDataset *ds);

struct OvbFitOptions ovb_fit_options_default(void);

/**
 * Cross-fitted short estimates.
 *
 * # Safety
 * `ds`, `opts` and `out` must be valid pointers.
 */
enum OvbStatus ovb_estimate(const struct OvbDataset *ds,
                            const struct OvbFitOptions *opts,
                            struct OvbEstimates **out);

/**
 * # Safety
 * `est` must be NULL or a handle from this library, freed once.
 */
void ovb_estimates_free(struct OvbEstimates *est);

/**
 * # Safety
 * `est` and `out` must be valid pointers.
 */
enum OvbStatus ovb_estimates_summary(const struct OvbEstimates *est, struct OvbSummary *out);

/**
 * Serializes the estimates (without per-observation scores) to JSON.
 *
 * # Safety
 * `est` and `out` must be valid; free `*out` with [`ovb_string_free`].
 */
enum OvbStatus ovb_estimates_to_json(const struct OvbEstimates *est, char **out);

/**
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum OvbStatus ovb_estimates_from_json(const char *json, struct OvbEstimates **out);

/**
 * Bounds on lambda, gamma and the identified set for theta.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OvbStatus ovb_bounds(const struct OvbEstimates *est,
                          const struct OvbSensitivity *sens,
                          struct OvbBounds *out);

/**
 * Identified set for theta from literal bounds on lambda and gamma.
 *
 * # Safety
 * `out` must be valid.
 */
enum OvbStatus ovb_theta_set(double lambda_lo,
                             double lambda_hi,
                             double gamma_lo,
                             double gamma_hi,
                             struct OvbThetaSet *out);

/**
 * `[lower_tau, upper_{1-tau}]` CI for the lambda or gamma bounds.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OvbStatus ovb_bound_ci(const struct OvbEstimates *est,
                            const struct OvbSensitivity *sens,
                            enum OvbTarget target,
                            double tau,
                            struct OvbInterval *out);

/**
 * Full CI report (bound CIs, inverted theta CI, conventional CIs,
 * shrinkage CIs and the phi curve) as JSON.
 *
 * # Safety
 * All pointers must be valid; free `*out` with [`ovb_string_free`].
 */
enum OvbStatus ovb_ci_report_json(const struct OvbEstimates *est,
                                  const struct OvbSensitivity *sens,
                                  double tau,
                                  double stoye_tau,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OVB_IV_H */
