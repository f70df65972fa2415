#ifndef HAIRSYNTH_H
#define HAIRSYNTH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_ARGUMENT = 2,
  HS_STATUS_IO = 3,
  HS_STATUS_FORMAT = 4,
  HS_STATUS_UNTRAINED = 5,
  HS_STATUS_SHAPE = 6,
  HS_STATUS_EMPTY_MASK = 7,
  HS_STATUS_PANIC = 8,
  HS_STATUS_INTERNAL = 9,
} HsStatus;

/**
 * An RGB or RGBA float image, values in `[0, 1]`, row-major interleaved.
 */
typedef struct HsImage HsImage;

/**
 * A binary mask.
 */
typedef struct HsMask HsMask;

/**
 * A trained two-stage pipeline.
 */
typedef struct HsPipeline HsPipeline;

/**
 * A set of guide strokes.
 */
typedef struct HsStrokes HsStrokes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next `hs_*` call on the same thread.
 */
const char *hs_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *hs_version(void);

/**
 * Loads a checkpoint written by `hairsynth train`.
 */
enum HsStatus hs_pipeline_load(const char *checkpoint, struct HsPipeline **out);

void hs_pipeline_free(struct HsPipeline *p);

/**
 * Image resolution the pipeline was trained at.
 */
size_t hs_pipeline_size(const struct HsPipeline *p);

/**
 * Synthesizes hair guided by `strokes` inside `mask`, composited into
 * `image`. The result is a new RGB image.
 */
enum HsStatus hs_synthesize(const struct HsPipeline *p,
                            const struct HsImage *image,
                            const struct HsMask *mask,
                            const struct HsStrokes *strokes,
                            struct HsImage **out,
                            double *elapsed_ms);

/**
 * Conditional inpainting of `mask` from a single RGB colour (3 floats).
 */
enum HsStatus hs_synthesize_init(const struct HsPipeline *p,
                                 const struct HsImage *image,
                                 const struct HsMask *mask,
                                 const float *rgb,
                                 struct HsImage **out);

/**
 * Copies `width * height * channels` floats (channels 1, 3 or 4).
 */
enum HsStatus hs_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const float *data,
                           struct HsImage **out);

enum HsStatus hs_image_load_png(const char *file, struct HsImage **out);

enum HsStatus hs_image_save_png(const struct HsImage *image, const char *file);

size_t hs_image_width(const struct HsImage *image);

size_t hs_image_height(const struct HsImage *image);

size_t hs_image_channels(const struct HsImage *image);

/**
 * Borrowed pixel data, valid while the handle lives.
 */
const float *hs_image_data(const struct HsImage *image);

void hs_image_free(struct HsImage *image);

/**
 * One byte per pixel, non-zero meaning inside.
 */
enum HsStatus hs_mask_new(size_t width, size_t height, const uint8_t *data, struct HsMask **out);

enum HsStatus hs_mask_load_png(const char *file, struct HsMask **out);

size_t hs_mask_count(const struct HsMask *mask);

void hs_mask_free(struct HsMask *mask);

/**
 * Parses a stroke set from NUL-terminated JSON.
 */
enum HsStatus hs_strokes_from_json(const char *json, struct HsStrokes **out);

enum HsStatus hs_strokes_load(const char *file, struct HsStrokes **out);

enum HsStatus hs_strokes_save(const struct HsStrokes *strokes, const char *file);

/**
 * Automatic annotation with the default settings.
 */
enum HsStatus hs_strokes_extract(const struct HsImage *image,
                                 const struct HsMask *mask,
                                 uint64_t seed,
                                 struct HsStrokes **out);

size_t hs_strokes_len(const struct HsStrokes *strokes);

void hs_strokes_free(struct HsStrokes *strokes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAIRSYNTH_H */
