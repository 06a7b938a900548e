#ifndef SATDEBLUR_H
#define SATDEBLUR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  /*
   Null pointer, bad length or a string that is not UTF-8.
   */
  SD_STATUS_INVALID_ARGUMENT = 1,
  /*
   Rejected configuration, parameter, shape or kernel.
   */
  SD_STATUS_CONFIG = 2,
  /*
   File, codec or weights failure.
   */
  SD_STATUS_IO = 3,
  /*
   The solver produced a non-finite value.
   */
  SD_STATUS_NUMERICAL = 4,
  /*
   A Rust panic was caught at the boundary.
   */
  SD_STATUS_INTERNAL = 5,
} SdStatus;

typedef struct SdImage SdImage;

typedef struct SdKernel SdKernel;

/*
 Solver settings; starts from the command-line defaults.
 */
typedef struct SdSolverConfig SdSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Description of the last failure on this thread, or null after a
 successful call. Valid until the next call into this library.
 */
const char *sd_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sd_version(void);

/*
 Copies `height * width * channels` interleaved samples into a new image.
 Non-finite samples are rejected.

 # Safety
 `data` must point to that many readable doubles; `out` must be writable.
 */
enum SdStatus sd_image_new(uintptr_t height,
                           uintptr_t width,
                           uintptr_t channels,
                           const double *data,
                           struct SdImage **out);

/*
 Reads a PNG or SDBF file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_image_read(const char *path, struct SdImage **out);

/*
 Writes 16-bit PNG, or SDBF when the path ends in `.sdbf`.

 # Safety
 `img` must be a live handle and `path` a NUL-terminated string.
 */
enum SdStatus sd_image_write(const struct SdImage *img, const char *path);

/*
 # Safety
 `img` must be a live handle; each non-null output must be writable.
 */
enum SdStatus sd_image_dims(const struct SdImage *img,
                            uintptr_t *height,
                            uintptr_t *width,
                            uintptr_t *channels);

/*
 Copies the samples out in interleaved order. `len` must equal
 `height * width * channels`.

 # Safety
 `img` must be a live handle and `data` writable for `len` doubles.
 */
enum SdStatus sd_image_copy_data(const struct SdImage *img, double *data, uintptr_t len);

/*
 # Safety
 `img` must be null or a handle not yet freed.
 */
void sd_image_free(struct SdImage *img);

/*
 Builds a kernel from row-major taps; taps are rescaled to sum to one.

 # Safety
 `taps` must point to `height * width` readable doubles; `out` writable.
 */
enum SdStatus sd_kernel_new(uintptr_t height,
                            uintptr_t width,
                            const double *taps,
                            struct SdKernel **out);

/*
 Reads the text kernel format.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_kernel_read(const char *path, struct SdKernel **out);

/*
 # Safety
 `k` must be null or a handle not yet freed.
 */
void sd_kernel_free(struct SdKernel *k);

/*
 Default settings: naive threshold map, hyper-Laplacian prior, 30 iterations.

 # Safety
 `out` must be writable.
 */
enum SdStatus sd_solver_config_new(struct SdSolverConfig **out);

/*
 # Safety
 `cfg` must be a live handle.
 */
enum SdStatus sd_solver_config_set_iterations(struct SdSolverConfig *cfg, uintptr_t iterations);

/*
 Map estimator spec, for example `unit`, `naive_threshold:0.9`,
 `smooth_clip:50` or `men_cnn`.

 # Safety
 `cfg` must be a live handle and `spec` a NUL-terminated string.
 */
enum SdStatus sd_solver_config_set_map(struct SdSolverConfig *cfg, const char *spec);

/*
 Prior spec: `none`, `hyper_laplacian[:LAMBDA[:ALPHA]]` or `pen_cnn`.

 # Safety
 `cfg` must be a live handle and `spec` a NUL-terminated string.
 */
enum SdStatus sd_solver_config_set_prior(struct SdSolverConfig *cfg, const char *spec);

/*
 Weights files for `men_cnn` and `pen_cnn`; either may be null to clear.

 # Safety
 `cfg` must be a live handle; paths must be null or NUL-terminated.
 */
enum SdStatus sd_solver_config_set_weights(struct SdSolverConfig *cfg,
                                           const char *men_path,
                                           const char *pen_path);

/*
 Output clamp between iterations; `enabled` of zero disables it.

 # Safety
 `cfg` must be a live handle.
 */
enum SdStatus sd_solver_config_set_clamp(struct SdSolverConfig *cfg,
                                         int32_t enabled,
                                         double ceiling);

/*
 # Safety
 `cfg` must be a live handle.
 */
enum SdStatus sd_solver_config_set_prior_cap(struct SdSolverConfig *cfg, double cap);

/*
 # Safety
 `cfg` must be null or a handle not yet freed.
 */
void sd_solver_config_free(struct SdSolverConfig *cfg);

/*
 Deblurs `blurry` with kernel `k`. Settings are validated here, and
 network weights are loaded here when a CNN estimator is selected.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum SdStatus sd_deblur(const struct SdImage *blurry,
                        const struct SdKernel *k,
                        const struct SdSolverConfig *cfg,
                        struct SdImage **out);

/*
 PSNR in dB; identical images give positive infinity.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum SdStatus sd_psnr(const struct SdImage *a, const struct SdImage *b, double *out);

/*
 # Safety
 Handles must be live; `out` must be writable.
 */
enum SdStatus sd_ssim(const struct SdImage *a, const struct SdImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SATDEBLUR_H */
