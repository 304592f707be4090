#ifndef KERNELMIX_H
#define KERNELMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum KmStatus {
  KM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KM_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid configuration, arguments, or image contents.
   */
  KM_STATUS_CONFIG = 2,
  KM_STATUS_IO = 3,
  /**
   * Degenerate kernel, non-finite values, or an ill-posed solve.
   */
  KM_STATUS_NUMERIC = 4,
  /**
   * A caller-supplied buffer is too small.
   */
  KM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  KM_STATUS_INTERNAL = 6,
} KmStatus;

/**
 * Kernel parameterization.
 */
typedef enum KmVariant {
  KM_VARIANT_SIMPLE = 0,
  KM_VARIANT_SCALE = 1,
  KM_VARIANT_CENTER = 2,
  KM_VARIANT_ROTATION = 3,
} KmVariant;

/**
 * Opaque image handle.
 */
typedef struct KmImage KmImage;

/**
 * Opaque deblurring result handle.
 */
typedef struct KmResult KmResult;

/**
 * Solver settings. Obtain defaults from `km_config_default`.
 */
typedef struct KmConfig {
  size_t n_bases;
  size_t kernel_size;
  double lambda1;
  double lambda2;
  double lambda3_init;
  double lambda3_decay;
  double epsilon;
  size_t max_outer_iters;
  size_t max_cg_iters;
  uint64_t rng_seed;
  /**
   * One of the `KmVariant` values.
   */
  uint32_t variant;
  /**
   * Nonzero enables the border taper.
   */
  uint8_t edge_taper;
} KmConfig;

/**
 * Image quality of a recovered image against a reference, averaged over
 * channels. PSNR fields are NaN when `undefined` is nonzero.
 */
typedef struct KmQuality {
  double rmse;
  double psnr_paper;
  double psnr_db;
  uint8_t undefined;
} KmQuality;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *km_last_error(void);

/**
 * Static, NUL-terminated crate version.
 */
const char *km_version(void);

/**
 * Fill `out` with the default solver settings.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `KmConfig`.
 */
enum KmStatus km_config_default(struct KmConfig *out);

/**
 * Check `config` without running anything.
 *
 * # Safety
 * `config` must be null or point to a valid `KmConfig`.
 */
enum KmStatus km_config_validate(const struct KmConfig *config);

/**
 * Build an image from `channels` planes of `width * height` samples each,
 * stored plane after plane in row-major order. One channel is grayscale,
 * three is RGB. Samples are intensities on the `[0, 1]` scale.
 *
 * # Safety
 * `data` must point to `width * height * channels` readable doubles and
 * `out` to writable storage for one pointer.
 */
enum KmStatus km_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const double *data,
                           struct KmImage **out);

/**
 * Read a PNG or PNM file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KmStatus km_image_read(const char *path, struct KmImage **out);

/**
 * Write an 8-bit PNG, clamping samples to `[0, 1]`.
 *
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
enum KmStatus km_image_write_png(const struct KmImage *image, const char *path);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
size_t km_image_width(const struct KmImage *image);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
size_t km_image_height(const struct KmImage *image);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
size_t km_image_channels(const struct KmImage *image);

/**
 * Copy channel `channel` into `out`, which holds `len` doubles.
 *
 * # Safety
 * `image` must be a live handle and `out` must hold `len` writable doubles.
 */
enum KmStatus km_image_copy_channel(const struct KmImage *image,
                                    size_t channel,
                                    double *out,
                                    size_t len);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void km_image_free(struct KmImage *image);

/**
 * Synthesize a preset degradation of a procedural gray test pattern of side
 * `size`. Either output pointer may be null to skip it.
 *
 * # Safety
 * `scenario` must be a NUL-terminated string; outputs null or writable.
 */
enum KmStatus km_synth_preset(const char *scenario,
                              size_t size,
                              struct KmImage **clean_out,
                              struct KmImage **blurred_out);

/**
 * Run blind deblurring. A null `config` uses the defaults.
 *
 * # Safety
 * `blurred` must be a live handle, `config` null or valid, `out` writable.
 */
enum KmStatus km_deblur(const struct KmImage *blurred,
                        const struct KmConfig *config,
                        struct KmResult **out);

/**
 * New image handle holding a copy of the recovered image.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum KmStatus km_result_latent(const struct KmResult *result, struct KmImage **out);

/**
 * Side length of the estimated kernel grid, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t km_result_kernel_size(const struct KmResult *result);

/**
 * Copy the kernel weights, row 0 at the top, into `out`.
 *
 * # Safety
 * `result` must be a live handle and `out` must hold `len` writable doubles.
 */
enum KmStatus km_result_copy_kernel(const struct KmResult *result, double *out, size_t len);

/**
 * Number of outer iterations performed.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t km_result_iterations(const struct KmResult *result);

/**
 * 1 when the run met the convergence test, 0 when it hit the iteration cap.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
uint8_t km_result_converged(const struct KmResult *result);

/**
 * Iteration trace as CSV text. Release with `km_string_free`.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
char *km_result_trace_csv(const struct KmResult *result);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void km_result_free(struct KmResult *result);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void km_string_free(char *s);

/**
 * Compare `recovered` against `reference` on the 8-bit scale.
 *
 * # Safety
 * Both images must be live handles and `out` writable.
 */
enum KmStatus km_quality(const struct KmImage *reference,
                         const struct KmImage *recovered,
                         struct KmQuality *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KERNELMIX_H */
