#ifndef ROBUST3S_H
#define ROBUST3S_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which per-coefficient quantity [`r3s_fit_values`] copies out.
typedef enum R3sFitValue {
  R3S_FIT_VALUE_COEFFICIENTS = 0,
  R3S_FIT_VALUE_STD_ERRORS = 1,
  R3S_FIT_VALUE_CI_LOWER = 2,
  R3S_FIT_VALUE_CI_UPPER = 3,
  R3S_FIT_VALUE_P_VALUES = 4,
} R3sFitValue;

typedef enum R3sMethod {
  R3S_METHOD_THREE_STEP = 0,
  R3S_METHOD_TWO_STEP = 1,
  R3S_METHOD_LEAST_SQUARES = 2,
} R3sMethod;

// Status codes returned by every fallible call.
typedef enum R3sStatus {
  R3S_STATUS_OK = 0,
  R3S_STATUS_NULL_POINTER = 1,
  R3S_STATUS_INVALID_ARGUMENT = 2,
  R3S_STATUS_DATA_ERROR = 3,
  R3S_STATUS_NUMERICAL_ERROR = 4,
  R3S_STATUS_PANIC = 5,
} R3sStatus;

// Opaque filter result.
typedef struct R3sFilterReport R3sFilterReport;

// Opaque regression result.
typedef struct R3sFit R3sFit;

// Tuning constants for [`r3s_fit`]. Start from [`r3s_fit_options_default`].
typedef struct R3sFitOptions {
  // Filter tail level.
  double alpha;
  // Filter switch threshold.
  double xi;
  // Confidence intervals have level `1 - tau`.
  double tau;
  // Number of random starts of the scatter estimator.
  size_t subsamples;
  uint64_t seed;
} R3sFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct R3sFitOptions r3s_fit_options_default(void);

// Fit the regression of `y` (length `n`) on the row-major `n × p`
// covariates `x`. `options` may be null for the defaults. On success
// `*out` owns a new handle.
//
// # Safety
// `x` must hold `n * p` doubles, `y` must hold `n`, and `out` must be a
// valid pointer to write to.
enum R3sStatus r3s_fit(const double *x,
                       size_t n,
                       size_t p,
                       const double *y,
                       enum R3sMethod method,
                       const struct R3sFitOptions *options,
                       struct R3sFit **out);

// Number of coefficients, intercept first: `p + 1`. Zero for null.
//
// # Safety
// `fit` must be null or a live handle from [`r3s_fit`].
size_t r3s_fit_num_coefficients(const struct R3sFit *fit);

// Residual scale, NaN for null.
//
// # Safety
// `fit` must be null or a live handle from [`r3s_fit`].
double r3s_fit_sigma(const struct R3sFit *fit);

// Copy `p + 1` values, intercept first, into `out`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum R3sStatus r3s_fit_values(const struct R3sFit *fit,
                              enum R3sFitValue which,
                              double *out,
                              size_t len);

// Copy the `(p + 1) × (p + 1)` asymptotic covariance, row-major.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum R3sStatus r3s_fit_asv(const struct R3sFit *fit, double *out, size_t len);

// Release a fit. Null is a no-op.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void r3s_fit_free(struct R3sFit *fit);

// Filter every column of the row-major `n × p` matrix `x`.
//
// # Safety
// `x` must hold `n * p` doubles and `out` must be a valid pointer.
enum R3sStatus r3s_filter(const double *x,
                          size_t n,
                          size_t p,
                          double alpha,
                          double xi,
                          struct R3sFilterReport **out);

// Write `n * p` row-major flags, 1 for a flagged cell. With `effective`
// nonzero the flags after the global switch are returned.
//
// # Safety
// `report` must be a live handle and `out` must hold `len` bytes.
enum R3sStatus r3s_filter_flags(const struct R3sFilterReport *report,
                                int32_t effective,
                                uint8_t *out,
                                size_t len);

// 1 when the global switch discarded all flags, 0 otherwise, -1 for null.
//
// # Safety
// `report` must be null or a live handle.
int32_t r3s_filter_switch_off(const struct R3sFilterReport *report);

// Number of raw flagged cells, 0 for null.
//
// # Safety
// `report` must be null or a live handle.
size_t r3s_filter_flagged_cells(const struct R3sFilterReport *report);

// Release a filter report. Null is a no-op.
//
// # Safety
// `report` must be null or a handle not yet freed.
void r3s_filter_free(struct R3sFilterReport *report);

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *r3s_last_error(void);

// Library version as a static NUL-terminated string.
const char *r3s_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST3S_H */
