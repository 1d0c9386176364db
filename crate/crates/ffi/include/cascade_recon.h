#ifndef CASCADE_RECON_H
#define CASCADE_RECON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CrStatus {
  CR_STATUS_OK = 0,
  CR_STATUS_INVALID_SHAPE = 1,
  CR_STATUS_INVALID_PARAMETER = 2,
  CR_STATUS_INVALID_STATE = 3,
  CR_STATUS_FORMAT_ERROR = 4,
  CR_STATUS_DIVERGED = 5,
  CR_STATUS_IO_ERROR = 6,
  CR_STATUS_NULL_POINTER = 7,
  CR_STATUS_PANIC = 8,
} CrStatus;

/**
 * Opaque model handle.
 */
typedef struct CrModel CrModel;

/**
 * Architecture of a model.
 */
typedef struct CrHyper {
  uint32_t n_c;
  uint32_t n_d;
  uint32_t n_f;
  uint32_t kernel;
} CrHyper;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *cr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cr_version(void);

/**
 * Loads a checkpoint, converting its parameters to single precision.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CrStatus cr_model_load(const char *path, struct CrModel **out);

/**
 * He-initialised model with hard data consistency.
 *
 * # Safety
 * `out` must be writable.
 */
enum CrStatus cr_model_he_init(struct CrHyper hyper, uint64_t seed, struct CrModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum CrStatus cr_model_save(const struct CrModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cr_model_free(struct CrModel *model);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum CrStatus cr_model_hyper(const struct CrModel *model, struct CrHyper *out);

/**
 * Variable-density mask: `n_low` centre rows plus Gaussian-weighted rows up
 * to `round(height / acceleration)` in total.
 *
 * # Safety
 * `lines_out` must hold `height` bytes.
 */
enum CrStatus cr_mask_generate(uint32_t height,
                               uint32_t width,
                               double acceleration,
                               uint32_t n_low,
                               uint64_t seed,
                               uint8_t *lines_out);

/**
 * Orthonormal 2D DFT of an image restricted to the mask rows.
 *
 * # Safety
 * All planes hold `height * width` floats; `mask` holds `height` bytes.
 */
enum CrStatus cr_undersample(uint32_t height,
                             uint32_t width,
                             const float *image_re,
                             const float *image_im,
                             const uint8_t *mask,
                             float *kspace_re,
                             float *kspace_im);

/**
 * Reconstructs an image from undersampled k-space. Coefficients outside the
 * mask rows are ignored. `zf_re`/`zf_im` may be null; when given they receive
 * the zero-filled image.
 *
 * # Safety
 * `model` must come from this library; all non-null planes hold
 * `height * width` floats; `mask` holds `height` bytes.
 */
enum CrStatus cr_reconstruct(const struct CrModel *model,
                             uint32_t height,
                             uint32_t width,
                             const float *kspace_re,
                             const float *kspace_im,
                             const uint8_t *mask,
                             float *out_re,
                             float *out_im,
                             float *zf_re,
                             float *zf_im);

/**
 * Forward orthonormal 2D DFT (DC at index 0).
 *
 * # Safety
 * All planes hold `height * width` floats.
 */
enum CrStatus cr_fft2(uint32_t height,
                      uint32_t width,
                      const float *in_re,
                      const float *in_im,
                      float *out_re,
                      float *out_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADE_RECON_H */
