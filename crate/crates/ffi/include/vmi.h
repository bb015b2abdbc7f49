#ifndef VMI_H
#define VMI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Zero is success.
 */
typedef enum VmiStatus {
  VMI_STATUS_OK = 0,
  VMI_STATUS_NULL_POINTER = 1,
  VMI_STATUS_INVALID_ARGUMENT = 2,
  VMI_STATUS_IO = 3,
  VMI_STATUS_FORMAT = 4,
  VMI_STATUS_DATA = 5,
  VMI_STATUS_NUMERIC = 6,
  VMI_STATUS_UNSUPPORTED = 7,
  VMI_STATUS_PANIC = 8,
} VmiStatus;

/*
 A loaded checkpoint.
 */
typedef struct VmiModel VmiModel;

/*
 Layout of a loaded model.
 */
typedef struct VmiModelInfo {
  size_t input_dim;
  size_t gauss_dim;
  /*
   Category count of the categorical code; 0 for a pure Gaussian model.
   */
  size_t cat_k;
} VmiModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *vmi_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *vmi_version(void);

/*
 Loads a checkpoint file and stores a new handle in `*out`.

 # Safety
 `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum VmiStatus vmi_model_load(const char *path, struct VmiModel **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must be null or a handle not yet freed.
 */
void vmi_model_free(struct VmiModel *model);

/*
 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum VmiStatus vmi_model_info(const struct VmiModel *model, struct VmiModelInfo *out);

/*
 Posterior means (`n × gauss_dim`) and, for joint models, category
 probabilities (`n × cat_k`). `probs_out` may be null to skip them.

 # Safety
 Buffers must hold the sizes above; `images` holds `n × input_dim` values.
 */
enum VmiStatus vmi_model_encode(const struct VmiModel *model,
                                const double *images_ptr,
                                size_t n,
                                double *mu_out,
                                double *probs_out);

/*
 Decoded pixel means (`n × input_dim`) for codes `z` (`n × gauss_dim`).
 Joint models need `categories` (`n` values below `cat_k`); Gaussian models
 require it to be null.

 # Safety
 Buffers must hold the sizes above.
 */
enum VmiStatus vmi_model_decode(const struct VmiModel *model,
                                const double *z,
                                const uint32_t *categories,
                                size_t n,
                                double *out);

/*
 Most probable category of each image under the encoder (joint models only).

 # Safety
 `images` holds `n × input_dim` values; `out` holds `n`.
 */
enum VmiStatus vmi_model_classify(const struct VmiModel *model,
                                  const double *images_ptr,
                                  size_t n,
                                  uint32_t *out);

/*
 Fits a fresh auxiliary network to the frozen model and writes the held-out
 MI lower bound (nats) and its standard error. `eval_samples` is clamped to
 half the images.

 # Safety
 `images` holds `n × input_dim` values; `bound_out` must be writable;
 `se_out` may be null.
 */
enum VmiStatus vmi_mi_estimate(const struct VmiModel *model,
                               const double *images_ptr,
                               size_t n,
                               size_t q_steps,
                               size_t batch_size,
                               size_t eval_samples,
                               uint64_t seed,
                               double *bound_out,
                               double *se_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VMI_H */
