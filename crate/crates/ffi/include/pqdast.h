#ifndef PQDAST_H
#define PQDAST_H

/* Generated from the pqdast-ffi crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PqdastStatus {
  /**
   * The call succeeded.
   */
  PQDAST_STATUS_OK = 0,
  /**
   * A pointer was null or an argument was out of contract.
   */
  PQDAST_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The file could not be read or written.
   */
  PQDAST_STATUS_IO_ERROR = 2,
  /**
   * The file exists but is not a usable checkpoint.
   */
  PQDAST_STATUS_BAD_CHECKPOINT = 3,
  /**
   * An internal failure; the message has details.
   */
  PQDAST_STATUS_RUNTIME_ERROR = 4,
} PqdastStatus;

/**
 * Opaque handle to a loaded stylization model.
 */
typedef struct PqdastModel PqdastModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread; never free it.
 * Returns an empty string if nothing failed yet.
 */
const char *pqdast_last_error(void);

/**
 * Loads a checkpoint into a new model handle written to `out`. On failure
 * `out` is untouched.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum PqdastStatus pqdast_model_load(const char *path, struct PqdastModel **out);

/**
 * Frees a handle from `pqdast_model_load()`. Null is a no-op.
 *
 * # Safety
 * `model` must be a handle returned by this library, freed at most once.
 */
void pqdast_model_free(struct PqdastModel *model);

/**
 * Returns 1 for a student (compressed) model, 0 for a teacher, -1 on null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int pqdast_model_is_student(const struct PqdastModel *model);

/**
 * Stylizes one content image with one style image into `out`
 * (`3 * height * width` floats, clamped to [0, 1]). Both sides of each
 * image must be multiples of 16 and at least 32.
 *
 * # Safety
 * `content` must point to `3 * height * width` readable floats, `style` to
 * `3 * style_height * style_width`, and `out` to `3 * height * width`
 * writable floats; `model` must be a live handle.
 */
enum PqdastStatus pqdast_stylize(const struct PqdastModel *model,
                                 const float *content,
                                 size_t height,
                                 size_t width,
                                 const float *style,
                                 size_t style_height,
                                 size_t style_width,
                                 float *out);

/**
 * Perceptual difference between two same-sized images under the given
 * viewing condition (pixels per degree; 67 is the usual default). Writes a
 * score in [0, 1] to `out_score`, 0 meaning identical.
 *
 * # Safety
 * `reference` and `test` must each point to `3 * height * width` readable
 * floats and `out_score` to a writable double.
 */
enum PqdastStatus pqdast_flip_score(const float *reference,
                                    const float *test,
                                    size_t height,
                                    size_t width,
                                    double ppd,
                                    double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PQDAST_H */
