#ifndef COLORENH_H
#define COLORENH_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum ColorenhStatus {
  COLORENH_STATUS_OK = 0,
  COLORENH_STATUS_NULL_POINTER = 1,
  COLORENH_STATUS_INVALID_ARGUMENT = 2,
  COLORENH_STATUS_CONFIG = 3,
  COLORENH_STATUS_DATA = 4,
  COLORENH_STATUS_IMAGE = 5,
  COLORENH_STATUS_CHECKPOINT = 6,
  COLORENH_STATUS_IO = 7,
  COLORENH_STATUS_NUMERIC = 8,
  COLORENH_STATUS_PANIC = 9,
} ColorenhStatus;

/**
 * A loaded pipeline.
 */
typedef struct ColorenhEnhancer ColorenhEnhancer;

/**
 * Scores of one image against a reference.
 */
typedef struct ColorenhMetrics {
  double lab_l2;
  double psnr;
  double ssim;
} ColorenhMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated library version.
 */
const char *colorenh_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on this thread.
 */
const char *colorenh_last_error(void);

/**
 * Loads the checkpoints a variant needs (`"CE"`, `"PR"`, `"PRNL"`,
 * `"CE_PR"`, `"CE_PRNL"`) from `checkpoint_dir`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum ColorenhStatus colorenh_enhancer_open(const char *checkpoint_dir,
                                           const char *variant,
                                           struct ColorenhEnhancer **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`colorenh_enhancer_open`] and not be used again.
 */
void colorenh_enhancer_free(struct ColorenhEnhancer *handle);

/**
 * Largest accepted width or height.
 *
 * # Safety
 * `handle` must be a live handle; `out` must be writable.
 */
enum ColorenhStatus colorenh_enhancer_max_edge(const struct ColorenhEnhancer *handle, size_t *out);

/**
 * Enhances interleaved 8-bit RGB pixels. `input` and `output` each hold
 * `width * height * 3` bytes and may alias.
 *
 * # Safety
 * Buffers must be valid for the stated size.
 */
enum ColorenhStatus colorenh_enhance_rgb8(const struct ColorenhEnhancer *handle,
                                          const uint8_t *input,
                                          size_t width,
                                          size_t height,
                                          uint8_t *output);

/**
 * Reads an image file, enhances it and writes the result (format chosen by
 * extension).
 *
 * # Safety
 * Paths must be NUL-terminated.
 */
enum ColorenhStatus colorenh_enhance_file(const struct ColorenhEnhancer *handle,
                                          const char *input_path,
                                          const char *output_path);

/**
 * L2 distance in Lab, PSNR and SSIM between two 8-bit RGB images of equal
 * size, at least 11x11.
 *
 * # Safety
 * Buffers must hold `width * height * 3` bytes; `out` must be writable.
 */
enum ColorenhStatus colorenh_metrics_rgb8(const uint8_t *a,
                                          const uint8_t *b,
                                          size_t width,
                                          size_t height,
                                          struct ColorenhMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLORENH_H */
