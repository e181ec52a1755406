#ifndef ADN_H
#define ADN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Zero is success.
 */
typedef enum AdnStatus {
  ADN_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  ADN_STATUS_NULL_POINTER = 1,
  /**
   * A value was out of range, such as an image size the networks cannot
   * take, or a path was not valid UTF-8.
   */
  ADN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Empty images or buffers whose sizes do not agree.
   */
  ADN_STATUS_DIMENSION = 3,
  /**
   * A checkpoint file was malformed.
   */
  ADN_STATUS_FORMAT = 4,
  ADN_STATUS_IO = 5,
  /**
   * A computation produced NaN or infinity.
   */
  ADN_STATUS_NUMERIC = 6,
  /**
   * An internal error; the message has details.
   */
  ADN_STATUS_INTERNAL = 7,
} AdnStatus;

/**
 * Sinogram-inpainting baselines.
 */
typedef enum AdnBaseline {
  ADN_BASELINE_LI = 0,
  ADN_BASELINE_NMAR = 1,
} AdnBaseline;

/**
 * Opaque model handle. Create with [`adn_model_load`] or [`adn_model_init`],
 * release with [`adn_model_free`].
 */
typedef struct AdnModel AdnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *adn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *adn_version(void);

/**
 * Loads an `ADNC` checkpoint into a new handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AdnStatus adn_model_load(const char *path, struct AdnModel **out);

/**
 * Creates a freshly initialized model. The default architecture is width
 * 64 with 4 residual blocks.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AdnStatus adn_model_init(size_t width,
                              size_t res_blocks,
                              uint64_t seed,
                              struct AdnModel **out);

/**
 * Writes the model parameters (no optimizer state) as an `ADNC` file.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum AdnStatus adn_model_save(const struct AdnModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void adn_model_free(struct AdnModel *model);

/**
 * Total number of scalar parameters.
 *
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum AdnStatus adn_model_parameter_count(const struct AdnModel *model, uint64_t *out);

/**
 * Removes artifacts from one HU image. Pixels above the metal threshold are
 * copied through unchanged. Height and width must be multiples of 4.
 *
 * # Safety
 * `input` and `output` must each hold `height * width` floats.
 */
enum AdnStatus adn_remove_artifacts(const struct AdnModel *model,
                                    const float *input,
                                    size_t height,
                                    size_t width,
                                    float *output);

/**
 * Applies the artifacts of `artifact` to the artifact-free `clean` image.
 *
 * # Safety
 * `artifact`, `clean` and `output` must each hold `height * width` floats.
 */
enum AdnStatus adn_transfer_artifacts(const struct AdnModel *model,
                                      const float *artifact,
                                      const float *clean,
                                      size_t height,
                                      size_t width,
                                      float *output);

/**
 * Corrects a square HU image with linear-interpolation or normalized
 * sinogram inpainting.
 *
 * # Safety
 * `input` and `output` must each hold `size * size` floats.
 */
enum AdnStatus adn_baseline(enum AdnBaseline method,
                            const float *input,
                            size_t size,
                            float *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADN_H */
