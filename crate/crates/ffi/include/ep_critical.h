#ifndef EP_CRITICAL_H
#define EP_CRITICAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EpStatus {
  EP_STATUS_OK = 0,
  EP_STATUS_NULL_POINTER = 1,
  EP_STATUS_INVALID_PARAMS = 2,
  // Bad profile, radius or point.
  EP_STATUS_INVALID_INPUT = 3,
  // Quadrature, root finding, integration or envelope failure.
  EP_STATUS_NUMERICAL = 4,
  EP_STATUS_CONFIG = 5,
  EP_STATUS_PANIC = 6,
} EpStatus;

typedef enum EpVerdict {
  EP_VERDICT_GLOBAL = 0,
  EP_VERDICT_BREAKDOWN = 1,
  EP_VERDICT_MARGINAL = 2,
} EpVerdict;

typedef enum EpReason {
  EP_REASON_ZERO_DENSITY = 0,
  EP_REASON_RHO_ZERO_GLOBAL_BRANCH = 1,
  EP_REASON_EQUILIBRIUM = 2,
  EP_REASON_A_ZERO_SIGN_CONDITION = 3,
  EP_REASON_KAPPA_OUTSIDE_WINDOW = 4,
  EP_REASON_NONNEGATIVE_A = 5,
  EP_REASON_ENVELOPE_CONTAINMENT = 6,
  EP_REASON_ENVELOPE_VIOLATION = 7,
} EpReason;

// Opaque configured classifier.
typedef struct EpClassifier EpClassifier;

// Opaque model parameters.
typedef struct EpParams EpParams;

// One classified characteristic. Absent quantities are NaN.
typedef struct EpResult {
  enum EpVerdict verdict;
  enum EpReason reason;
  double margin;
  double tc_estimate;
  double a0;
  double kappa;
} EpResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *ep_last_error_message(void);

// Library version as a static nul-terminated string.
const char *ep_version(void);

// Validates `(k, c, n)` and writes a new handle to `out`.
//
// # Safety
// `out` must be null or valid for a pointer write.
enum EpStatus ep_params_new(double k, double c, uint32_t n, struct EpParams **out);

// # Safety
// `p` must be null or a handle from [`ep_params_new`] not yet freed.
void ep_params_free(struct EpParams *p);

// Classifier for `params` with Marginal band `margin` (relative). Critical
// time estimates are skipped when `estimate_tc` is false.
//
// # Safety
// `params` must be a live handle; `out` must be valid for a pointer write.
enum EpStatus ep_classifier_new(const struct EpParams *params,
                                double margin,
                                bool estimate_tc,
                                struct EpClassifier **out);

// # Safety
// `c` must be null or a handle from [`ep_classifier_new`] not yet freed.
void ep_classifier_free(struct EpClassifier *c);

// Classifies the characteristic through radius `r` with `u0`, `phi0r`,
// `u0r` and `rho0` given there.
//
// # Safety
// `c` must be a live handle; `out` must be valid for a write.
enum EpStatus ep_classify_point(const struct EpClassifier *c,
                                double r,
                                double u0,
                                double phi0r,
                                double u0r,
                                double rho0,
                                struct EpResult *out);

// Classifies a sampled radial profile `(r, rho0, u0)` of `len` rows at the
// `n_radii` radii in `radii`, writing `n_radii` results to `out`.
//
// # Safety
// `r`, `rho0`, `u0` must point to `len` doubles, `radii` to `n_radii`
// doubles and `out` to room for `n_radii` results.
enum EpStatus ep_classify_profile(const struct EpClassifier *c,
                                  const double *r,
                                  const double *rho0,
                                  const double *u0,
                                  size_t len,
                                  const double *radii,
                                  size_t n_radii,
                                  struct EpResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EP_CRITICAL_H */
