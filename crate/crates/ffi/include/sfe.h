#ifndef SFE_H
#define SFE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which field component to evaluate.
 */
typedef enum SfeFieldPart {
  SfeFieldPart_Incident = 0,
  SfeFieldPart_Scattered = 1,
  SfeFieldPart_Total = 2,
} SfeFieldPart;

/**
 * Status codes returned by fallible calls; they mirror the library's error
 * taxonomy (validation 2, numeric 3, I/O 4).
 */
typedef enum SfeStatus {
  SfeStatus_Ok = 0,
  SfeStatus_NullPointer = 1,
  SfeStatus_Validation = 2,
  SfeStatus_Numeric = 3,
  SfeStatus_Io = 4,
  SfeStatus_Panic = 5,
} SfeStatus;

/**
 * Opaque microphone array handle.
 */
typedef struct SfeArray SfeArray;

/**
 * Opaque fitted estimate handle.
 */
typedef struct SfeEstimate SfeEstimate;

/**
 * Opaque pressure snapshot handle (one frequency).
 */
typedef struct SfeSnapshot SfeSnapshot;

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (then only the
 * length is returned).
 */
uintptr_t sfe_last_error(char *buf, uintptr_t len);

/**
 * The built-in 60-microphone spherical design scaled to `radius_m`.
 */
struct SfeArray *sfe_array_tdesign60(double radius_m);

/**
 * An array from `n_mics` positions (flat xyz, meters), all on the sphere of
 * radius `radius_m`.
 *
 * # Safety
 * `xyz` must point to `3 * n_mics` readable doubles.
 */
struct SfeArray *sfe_array_new(const double *xyz, uintptr_t n_mics, double radius_m);

/**
 * Number of microphones (0 for a null handle).
 *
 * # Safety
 * `array` must be a live handle from an `sfe_array_*` constructor or null.
 */
uintptr_t sfe_array_len(const struct SfeArray *array);

/**
 * # Safety
 * `array` must come from an `sfe_array_*` constructor and not be freed twice.
 */
void sfe_array_free(struct SfeArray *array);

/**
 * Wraps measured complex pressures (length = microphone count) at one
 * frequency.
 *
 * # Safety
 * `re` and `im` must point to `n` readable doubles; `array` must be a live
 * handle.
 */
struct SfeSnapshot *sfe_snapshot_new(const struct SfeArray *array,
                                     double frequency_hz,
                                     double sound_speed_mps,
                                     const double *re,
                                     const double *im,
                                     uintptr_t n);

/**
 * Simulates rigid-sphere pressures for a single point source, optionally
 * adding calibrated complex Gaussian noise (`snr_db = INFINITY` for none).
 *
 * # Safety
 * `source_xyz` must point to 3 readable doubles; `array` must be live.
 */
struct SfeSnapshot *sfe_simulate(const struct SfeArray *array,
                                 double frequency_hz,
                                 double sound_speed_mps,
                                 const double *source_xyz,
                                 double amplitude_re,
                                 double amplitude_im,
                                 uint32_t forward_order,
                                 double snr_db,
                                 uint64_t seed);

/**
 * Copies the snapshot's complex pressures into `re`/`im`.
 *
 * # Safety
 * `re` and `im` must point to at least `sfe_array_len` writable doubles.
 */
enum SfeStatus sfe_snapshot_pressures(const struct SfeSnapshot *snapshot, double *re, double *im);

/**
 * # Safety
 * `snapshot` must come from a constructor and not be freed twice.
 */
void sfe_snapshot_free(struct SfeSnapshot *snapshot);

/**
 * Modal least-squares fit on the rigid-sphere response up to `order`,
 * ridge weight `lambda`.
 *
 * # Safety
 * `snapshot` must be a live handle.
 */
struct SfeEstimate *sfe_fit_swf(const struct SfeSnapshot *snapshot, uint32_t order, double lambda);

/**
 * Open-field kernel ridge regression with the diffuse-field kernel and a
 * radiating-basis scattered term up to `order`.
 *
 * # Safety
 * `snapshot` must be a live handle.
 */
struct SfeEstimate *sfe_fit_krr_bessel(const struct SfeSnapshot *snapshot,
                                       uint32_t order,
                                       double lambda1,
                                       double lambda2);

/**
 * Boundary-constrained fit with the diffuse-field incident kernel and the
 * source-region scattered kernel truncated at `n_ext`.
 *
 * `analytic_weight` selects the uniform-source modal weights (otherwise
 * unit weights); `ridge_penalty` replaces the kernel-weighted penalty with
 * `ridge_lambda * I`.
 *
 * # Safety
 * `snapshot` must be a live handle.
 */
struct SfeEstimate *sfe_fit_boundary_constrained(const struct SfeSnapshot *snapshot,
                                                 uint32_t n_ext,
                                                 bool analytic_weight,
                                                 double lambda1,
                                                 double lambda2,
                                                 bool ridge_penalty,
                                                 double ridge_lambda);

/**
 * Evaluates a fitted estimate at `n_points` positions (flat xyz).
 *
 * # Safety
 * `points_xyz` must hold `3 * n_points` readable doubles; `out_re`/`out_im`
 * must hold `n_points` writable doubles; `estimate` must be live.
 */
enum SfeStatus sfe_estimate_eval(const struct SfeEstimate *estimate,
                                 const double *points_xyz,
                                 uintptr_t n_points,
                                 enum SfeFieldPart part,
                                 double *out_re,
                                 double *out_im);

/**
 * # Safety
 * `estimate` must come from a fit constructor and not be freed twice.
 */
void sfe_estimate_free(struct SfeEstimate *estimate);

/**
 * Normalized mean squared error in dB between complex vectors.
 *
 * # Safety
 * All arrays must hold `n` readable doubles; `out_db` must be writable.
 */
enum SfeStatus sfe_nmse_db(const double *est_re,
                           const double *est_im,
                           const double *truth_re,
                           const double *truth_im,
                           uintptr_t n,
                           double *out_db);

/**
 * Free-field pressure of a point source at `n_points` positions.
 *
 * # Safety
 * `source_xyz` holds 3 doubles, `points_xyz` holds `3 * n_points`, and the
 * output arrays hold `n_points` writable doubles.
 */
enum SfeStatus sfe_point_source_field(const double *source_xyz,
                                      double amplitude_re,
                                      double amplitude_im,
                                      double frequency_hz,
                                      double sound_speed_mps,
                                      const double *points_xyz,
                                      uintptr_t n_points,
                                      double *out_re,
                                      double *out_im);

#endif  /* SFE_H */
