#ifndef GATED_H
#define GATED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum GatedStatus {
  GATED_STATUS_OK = 0,
  GATED_STATUS_NULL_POINTER = 1,
  GATED_STATUS_INVALID_ARGUMENT = 2,
  GATED_STATUS_DIMENSION_MISMATCH = 3,
  GATED_STATUS_OUT_OF_DOMAIN = 4,
  GATED_STATUS_IO = 5,
  GATED_STATUS_PARSE = 6,
  GATED_STATUS_NO_EVALUATED_POINTS = 7,
  GATED_STATUS_PANIC = 8,
} GatedStatus;

/*
 Opaque per-frame estimation result.
 */
typedef struct GatedEstimate GatedEstimate;

/*
 Opaque set of three fitted slice profiles.
 */
typedef struct GatedProfiles GatedProfiles;

/*
 Levenberg–Marquardt settings; obtain defaults from [`gated_lm_options_default`].
 */
typedef struct GatedLmOptions {
  double init_grid_step_m;
  uint32_t max_iterations;
  double damping_init;
  double damping_up;
  double damping_down;
  double param_tolerance_m;
  double residual_tolerance;
  double albedo_max;
} GatedLmOptions;

/*
 Result of fitting one pixel.
 */
typedef struct GatedPixelEstimate {
  double range_m;
  double albedo;
  double residual;
  uint32_t iterations;
  bool converged;
} GatedPixelEstimate;

typedef struct GatedMetrics {
  double rmse;
  double mae;
  double ard;
  double delta1;
  double delta2;
  double delta3;
  double completeness;
  size_t evaluated_points;
  size_t total_points;
} GatedMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the next
 call into this library from the same thread.
 */
const char *gated_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gated_version(void);

/*
 Fits the built-in default profile configuration at degree 6.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum GatedStatus gated_profiles_default(struct GatedProfiles **out);

/*
 Parses fitted profiles JSON (`{"version", "profiles": [...]}`).

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer to writable
 storage for one handle.
 */
enum GatedStatus gated_profiles_from_json(const char *json, struct GatedProfiles **out);

/*
 Synthesizes and fits a profile configuration JSON at the given degree.

 # Safety
 As for [`gated_profiles_from_json`].
 */
enum GatedStatus gated_profiles_from_config_json(const char *json,
                                                 uint32_t degree,
                                                 struct GatedProfiles **out);

/*
 Loads a fitted profiles JSON file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer to writable
 storage for one handle.
 */
enum GatedStatus gated_profiles_load(const char *path, struct GatedProfiles **out);

/*
 Releases a profiles handle. NULL is ignored.

 # Safety
 `profiles` must be NULL or a handle from this library not yet freed.
 */
void gated_profiles_free(struct GatedProfiles *profiles);

/*
 Writes the common profile domain in meters.

 # Safety
 All pointers must be valid; `lo` and `hi` writable.
 */
enum GatedStatus gated_profiles_domain(const struct GatedProfiles *profiles,
                                       double *lo,
                                       double *hi);

/*
 Evaluates the three profiles at `range_m`; `values` receives 3 doubles.

 # Safety
 `profiles` must be a live handle and `values` point to 3 writable doubles.
 */
enum GatedStatus gated_profiles_eval(const struct GatedProfiles *profiles,
                                     double range_m,
                                     double *values);

struct GatedLmOptions gated_lm_options_default(void);

/*
 Renders `albedo * C~(depth) + ambient` into `slices_out` (`3 * width * height`
 doubles, slice-major). NaN depth renders ambient only. With `quantize` the
 values are clipped to [0, 1023] and rounded.

 # Safety
 `depth` and `albedo` must hold `width * height` floats, `slices_out` must have
 room for `3 * width * height` doubles, and `profiles` must be a live handle.
 */
enum GatedStatus gated_render(const struct GatedProfiles *profiles,
                              const float *depth,
                              const float *albedo,
                              size_t width,
                              size_t height,
                              double ambient_level,
                              bool quantize,
                              double *slices_out);

/*
 Applies `z = a * Poisson(I / a) + N(0, b)`, clipped and rounded to 10-bit DN, to a
 slice-major stack of `3 * width * height` doubles, writing into `out` (which may
 alias `slices`).

 # Safety
 `slices` and `out` must each hold `3 * width * height` doubles.
 */
enum GatedStatus gated_add_noise(const double *slices,
                                 size_t width,
                                 size_t height,
                                 double a,
                                 double b,
                                 uint64_t seed,
                                 double *out);

/*
 Fits `(range, albedo)` to one ambient-free measurement triple `z[3]`. `opts` may be
 NULL for defaults.

 # Safety
 `z` must point to 3 doubles, `out` to writable storage, `profiles` to a live handle.
 */
enum GatedStatus gated_estimate_pixel(const struct GatedProfiles *profiles,
                                      const double *z,
                                      const struct GatedLmOptions *opts,
                                      struct GatedPixelEstimate *out);

/*
 Estimates depth and albedo for an ambient-subtracted slice-major stack of
 `3 * width * height` DN values. `opts` may be NULL for defaults.

 # Safety
 `slices` must hold `3 * width * height` doubles, `out` must be writable and
 `profiles` a live handle.
 */
enum GatedStatus gated_estimate(const struct GatedProfiles *profiles,
                                const double *slices,
                                size_t width,
                                size_t height,
                                const struct GatedLmOptions *opts,
                                struct GatedEstimate **out);

/*
 Releases an estimate handle. NULL is ignored.

 # Safety
 `estimate` must be NULL or a handle from [`gated_estimate`] not yet freed.
 */
void gated_estimate_free(struct GatedEstimate *estimate);

/*
 Depth in meters, `width * height` floats, NaN where not illuminated. Owned by the
 handle.

 # Safety
 `estimate` must be a live handle.
 */
const float *gated_estimate_depth(const struct GatedEstimate *estimate);

/*
 Albedo in [0, 1], `width * height` floats. Owned by the handle.

 # Safety
 `estimate` must be a live handle.
 */
const float *gated_estimate_albedo(const struct GatedEstimate *estimate);

/*
 Final squared residual per pixel, `width * height` doubles. Owned by the handle.

 # Safety
 `estimate` must be a live handle.
 */
const double *gated_estimate_residual(const struct GatedEstimate *estimate);

/*
 Illumination mask (1 = illuminated), `width * height` bytes. Owned by the handle.

 # Safety
 `estimate` must be a live handle.
 */
const uint8_t *gated_estimate_mask(const struct GatedEstimate *estimate);

/*
 Number of illuminated pixels.

 # Safety
 `estimate` must be a live handle.
 */
size_t gated_estimate_illuminated_count(const struct GatedEstimate *estimate);

/*
 Scores `pred` against dense `gt` (NaN = no ground truth) on pixels where `mask` is
 non-zero (NULL mask = every pixel), restricted to ground truth within `max_range`.

 # Safety
 `pred` and `gt` must hold `width * height` floats, `mask` (if non-NULL) that many
 bytes, and `out` must be writable.
 */
enum GatedStatus gated_metrics(const float *pred,
                               const float *gt,
                               const uint8_t *mask,
                               size_t width,
                               size_t height,
                               double max_range,
                               struct GatedMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GATED_H */
