#ifndef BMIMAP_H
#define BMIMAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call. `BMIMAP_STATUS_OK` is 0.
typedef enum BmimapStatus {
  BMIMAP_STATUS_OK = 0,
  BMIMAP_STATUS_NULL_POINTER = 1,
  BMIMAP_STATUS_INVALID_UTF8 = 2,
  BMIMAP_STATUS_VALIDATION = 3,
  BMIMAP_STATUS_DOMAIN = 4,
  BMIMAP_STATUS_BOUNDARY = 5,
  BMIMAP_STATUS_INFEASIBLE = 6,
  BMIMAP_STATUS_NON_CONVERGENCE = 7,
  BMIMAP_STATUS_RANGE = 8,
  BMIMAP_STATUS_SAMPLING = 9,
  BMIMAP_STATUS_INVALID_BASE = 10,
  BMIMAP_STATUS_STEP_REJECTED = 11,
  BMIMAP_STATUS_UNKNOWN_CHART = 12,
  BMIMAP_STATUS_IO = 13,
  BMIMAP_STATUS_PARSE = 14,
  BMIMAP_STATUS_PANIC = 99,
} BmimapStatus;

// Age distribution of sampled participants, passed as `int32_t`.
typedef enum BmimapAgeKind {
  BMIMAP_AGE_KIND_NORMAL = 0,
  BMIMAP_AGE_KIND_UNIFORM = 1,
} BmimapAgeKind;

// Opaque reference chart.
typedef struct BmimapChart BmimapChart;

typedef struct BmimapLms {
  double lambda;
  double mu;
  double sigma;
} BmimapLms;

typedef struct BmimapOptimConfig {
  double delta_step;
  double delta_tol;
  size_t n_max;
  size_t n_samples;
  uint64_t seed;
} BmimapOptimConfig;

// A normal zBMI distribution.
typedef struct BmimapZDist {
  double m_z;
  double s_z;
} BmimapZDist;

// Mapped zBMI aggregate.
//
// `mean`/`sd` are sample estimates. For the optimization method
// `has_distribution` is true and `dist_mean`/`dist_sd` hold the fitted
// distribution; otherwise they are NaN.
typedef struct BmimapMapped {
  double mean;
  double sd;
  size_t n_samples;
  bool converged;
  size_t iterations;
  bool has_distribution;
  double dist_mean;
  double dist_sd;
  // NaN when the method does not truncate.
  double truncated_fraction;
  bool oscillating;
} BmimapMapped;

typedef struct BmimapDemographics {
  double mean_age_months;
  double sd_age_months;
  // Proportion of males in `[0, 1]`.
  double prop_male;
} BmimapDemographics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL.
//
// The pointer stays valid until the next failing call on the same thread.
const char *bmimap_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *bmimap_version(void);

// Creates a handle to a bundled chart (`"cdc"` or `"who"`).
//
// # Safety
// `id` must be a NUL-terminated string; `out` must be a valid pointer.
enum BmimapStatus bmimap_chart_bundled(const char *id, struct BmimapChart **out);

// Loads and validates a chart CSV (`sex,age_months,lambda,mu,sigma`).
//
// # Safety
// `path` and `id` must be NUL-terminated strings; `out` must be a valid pointer.
enum BmimapStatus bmimap_chart_load_csv(const char *path, const char *id, struct BmimapChart **out);

// Releases a chart handle. NULL is ignored.
//
// # Safety
// `chart` must come from a `bmimap_chart_*` constructor and not be freed twice.
void bmimap_chart_free(struct BmimapChart *chart);

// LMS parameters at `age_months` for `male` (true) or female.
//
// # Safety
// `chart` must be a live handle; `out` must be a valid pointer.
enum BmimapStatus bmimap_chart_lookup(const struct BmimapChart *chart,
                                      double age_months,
                                      bool male,
                                      struct BmimapLms *out);

// Smallest z bound `-1/(lambda*sigma)` over the chart.
//
// # Safety
// `chart` must be a live handle; `out` must be a valid pointer.
enum BmimapStatus bmimap_chart_min_z_bound(const struct BmimapChart *chart, double *out);

// zBMI of one BMI value.
//
// # Safety
// `out` must be a valid pointer.
enum BmimapStatus bmimap_z_from_bmi(double bmi, struct BmimapLms lms, double *out);

// BMI of one zBMI value; fails with `InvalidBase` beyond the LMS bound.
//
// # Safety
// `out` must be a valid pointer.
enum BmimapStatus bmimap_bmi_from_z(double z, struct BmimapLms lms, double *out);

// Caps `z` at 99% of the LMS bound when `lambda < 0`.
double bmimap_truncate_z(double z, struct BmimapLms lms);

struct BmimapOptimConfig bmimap_optim_config_percentile_default(uint64_t seed);

struct BmimapOptimConfig bmimap_optim_config_bmi_default(uint64_t seed);

// Closed-form mapping of percentile (mean, SD) on `[0, 1]` to zBMI.
//
// # Safety
// `out` must be a valid pointer.
enum BmimapStatus bmimap_map_percentile_analytical(double mean, double sd, struct BmimapZDist *out);

// Sampling mapping of percentile (mean, SD) on `[0, 1]` with `n` draws.
//
// # Safety
// `out` must be a valid pointer.
enum BmimapStatus bmimap_map_percentile_sampling(double mean,
                                                 double sd,
                                                 size_t n,
                                                 uint64_t seed,
                                                 struct BmimapMapped *out);

// Optimization mapping of percentile (mean, SD) on `[0, 1]`.
//
// A search that hits `n_max` is not an error: check `converged`.
//
// # Safety
// `cfg` and `out` must be valid pointers.
enum BmimapStatus bmimap_map_percentile_optim(double mean,
                                              double sd,
                                              const struct BmimapOptimConfig *cfg,
                                              struct BmimapMapped *out);

// Sampling mapping of BMI (mean, SD) in kg/m^2 against `chart`.
//
// # Safety
// `chart` must be a live handle; `demo` and `out` must be valid pointers.
enum BmimapStatus bmimap_map_bmi_sampling(const struct BmimapChart *chart,
                                          double mean,
                                          double sd,
                                          const struct BmimapDemographics *demo,
                                          int32_t age_kind,
                                          size_t n,
                                          uint64_t seed,
                                          struct BmimapMapped *out);

// Optimization mapping of BMI (mean, SD) in kg/m^2 against `chart`.
//
// # Safety
// `chart` must be a live handle; `demo`, `cfg` and `out` must be valid pointers.
enum BmimapStatus bmimap_map_bmi_optim(const struct BmimapChart *chart,
                                       double mean,
                                       double sd,
                                       const struct BmimapDemographics *demo,
                                       int32_t age_kind,
                                       const struct BmimapOptimConfig *cfg,
                                       struct BmimapMapped *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BMIMAP_H */
