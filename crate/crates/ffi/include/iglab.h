#ifndef IGLAB_H
#define IGLAB_H

/* Generated by cbindgen; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum IglabStatus {
  IGLAB_STATUS_OK = 0,
  /**
   * A check ran and its verdict is Fails, or a canned example mismatched.
   */
  IGLAB_STATUS_FAILS = 1,
  IGLAB_STATUS_INVALID_ARGUMENT = 2,
  IGLAB_STATUS_NUMERICAL = 3,
  IGLAB_STATUS_NULL_POINTER = 4,
  IGLAB_STATUS_PANIC = 5,
} IglabStatus;

/**
 * Opaque censoring mechanism.
 */
typedef struct IglabCdm IglabCdm;

/**
 * Opaque affine Gaussian family.
 */
typedef struct IglabFamily IglabFamily;

/**
 * Opaque missing-data mechanism.
 */
typedef struct IglabMdm IglabMdm;

/**
 * Grid and tolerance settings for the checks. Obtain defaults from
 * [`iglab_check_options_default`] and override fields as needed.
 */
typedef struct IglabCheckOptions {
  double theta_lo;
  double theta_hi;
  size_t theta_per_axis;
  size_t probe_points;
  double rel_tol;
  double abs_tol;
  uint64_t seed;
  size_t gh_order;
  /**
   * Single ψ to check at, `psi_len` values; null means the mechanism's
   * default probe set.
   */
  const double *psi;
  size_t psi_len;
} IglabCheckOptions;

typedef struct IglabVerdict {
  bool holds;
  double deviation;
  double tolerance;
  size_t probes;
  size_t skipped;
} IglabVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *iglab_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *iglab_version(void);

/**
 * Family `N(Aθ + b, Σ)` with `A` (k×d) and `Σ` (k×k) in row-major order.
 *
 * # Safety
 * `a`, `b` and `sigma` must point to `k*d`, `k` and `k*k` doubles.
 */
enum IglabStatus iglab_family_new(size_t k,
                                  size_t d,
                                  const double *a,
                                  const double *b,
                                  const double *sigma,
                                  struct IglabFamily **out);

/**
 * Built-in family by name: `example_3_1`, `complete_control`, `scalar`,
 * or `iid_<k>` (e.g. `iid_3`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum IglabStatus iglab_family_builtin(const char *name, struct IglabFamily **out);

/**
 * # Safety
 * `family` must come from a family constructor and not be freed twice.
 */
void iglab_family_free(struct IglabFamily *family);

/**
 * # Safety
 * `family` must be a live handle; `k` and `d` must be writable.
 */
enum IglabStatus iglab_family_dims(const struct IglabFamily *family, size_t *k, size_t *d);

/**
 * `ln f(y; θ)`.
 *
 * # Safety
 * `y` and `theta` must point to `y_len` and `theta_len` doubles.
 */
enum IglabStatus iglab_family_log_density(const struct IglabFamily *family,
                                          const double *y,
                                          size_t y_len,
                                          const double *theta,
                                          size_t theta_len,
                                          double *out);

/**
 * Mechanism by kind name (`mar_logistic`, `mnar_logistic`, `ex32`, `ex33`,
 * `table`) for responses of dimension `k`.
 *
 * # Safety
 * `kind` must be a NUL-terminated string; `out` must be writable.
 */
enum IglabStatus iglab_mdm_new(const char *kind, size_t k, struct IglabMdm **out);

/**
 * # Safety
 * `mdm` must come from [`iglab_mdm_new`] and not be freed twice.
 */
void iglab_mdm_free(struct IglabMdm *mdm);

/**
 * `f(r | y; ψ)`; `r` holds `k` bytes, nonzero meaning observed.
 *
 * # Safety
 * `r` and `y` must point to `k` elements, `psi` to `psi_len` doubles.
 */
enum IglabStatus iglab_mdm_prob(const struct IglabMdm *mdm,
                                const uint8_t *r,
                                const double *y,
                                size_t k,
                                const double *psi,
                                size_t psi_len,
                                double *out);

/**
 * Censoring mechanism by kind name (`ex41`, `car_censor`).
 *
 * # Safety
 * `kind` must be a NUL-terminated string; `out` must be writable.
 */
enum IglabStatus iglab_cdm_new(const char *kind, struct IglabCdm **out);

/**
 * # Safety
 * `cdm` must come from [`iglab_cdm_new`] and not be freed twice.
 */
void iglab_cdm_free(struct IglabCdm *cdm);

/**
 * Density of the censoring time `g` given `(y1, y2)`.
 *
 * # Safety
 * `cdm` must be a live handle; `out` must be writable.
 */
enum IglabStatus iglab_cdm_density(const struct IglabCdm *cdm,
                                   double g,
                                   double y1,
                                   double y2,
                                   double psi,
                                   double *out);

struct IglabCheckOptions iglab_check_options_default(void);

/**
 * MAR check. Returns `IGLAB_STATUS_OK` for Holds, `IGLAB_STATUS_FAILS`
 * for Fails; `out` is filled in both cases. `options` may be null.
 *
 * # Safety
 * Handles must be live; `options` null or valid; `out` writable.
 */
enum IglabStatus iglab_check_mar(const struct IglabFamily *family,
                                 const struct IglabMdm *mdm,
                                 const struct IglabCheckOptions *options,
                                 struct IglabVerdict *out);

/**
 * Likelihood-ignorability check for a missing-data mechanism.
 *
 * # Safety
 * As [`iglab_check_mar`].
 */
enum IglabStatus iglab_check_lig(const struct IglabFamily *family,
                                 const struct IglabMdm *mdm,
                                 const struct IglabCheckOptions *options,
                                 struct IglabVerdict *out);

/**
 * Coarsening-at-random check; uses standard normal probes for `y₁`.
 *
 * # Safety
 * As [`iglab_check_mar`].
 */
enum IglabStatus iglab_check_car(const struct IglabCdm *cdm,
                                 const struct IglabCheckOptions *options,
                                 struct IglabVerdict *out);

/**
 * Coarse-data ignorability check for a bivariate family.
 *
 * # Safety
 * As [`iglab_check_mar`].
 */
enum IglabStatus iglab_check_cdm_lig(const struct IglabFamily *family,
                                     const struct IglabCdm *cdm,
                                     const struct IglabCheckOptions *options,
                                     struct IglabVerdict *out);

/**
 * Holds when `E_θ[cᵀ(Y − b)] = 0` over the θ grid.
 *
 * # Safety
 * `c` must point to `c_len` doubles; otherwise as [`iglab_check_mar`].
 */
enum IglabStatus iglab_check_witness(const struct IglabFamily *family,
                                     const double *c,
                                     size_t c_len,
                                     const struct IglabCheckOptions *options,
                                     struct IglabVerdict *out);

/**
 * Run a canned example (`"3.1"`, `"3.2"`, `"3.3"`, `"4.1"`, `"5.4"`) and
 * hand back the JSON report in `*report_json`, to be released with
 * [`iglab_string_free`]. Returns `IGLAB_STATUS_FAILS` when a verdict
 * does not match its expectation.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `report_json` must be writable.
 */
enum IglabStatus iglab_verify_example(const char *id, char **report_json);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void iglab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IGLAB_H */
