#ifndef DRAGGUIDE_H
#define DRAGGUIDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_ARGUMENT = 2,
  DG_STATUS_SHAPE_MISMATCH = 3,
  DG_STATUS_NON_FINITE = 4,
  DG_STATUS_STEP_OUT_OF_RANGE = 5,
  DG_STATUS_NO_MATCHING_COMPONENT = 6,
  DG_STATUS_NOT_GUIDABLE = 7,
  DG_STATUS_IO = 8,
  DG_STATUS_FORMAT = 9,
  DG_STATUS_DATA = 10,
  DG_STATUS_PANIC = 11,
} DgStatus;

typedef enum DgScheduleKind {
  DG_SCHEDULE_KIND_LOG_LINEAR = 0,
  DG_SCHEDULE_KIND_LINEAR = 1,
} DgScheduleKind;

typedef enum DgSamplerKind {
  DG_SAMPLER_KIND_DDIM = 0,
  DG_SAMPLER_KIND_DDIM_PGD_FORM = 1,
  DG_SAMPLER_KIND_GRADIENT_ESTIMATION = 2,
} DgSamplerKind;

/**
 * Opaque exact mixture denoiser.
 */
typedef struct DgMixture DgMixture;

/**
 * Opaque trained drag surrogate.
 */
typedef struct DgModel DgModel;

/**
 * Opaque noise schedule `σ_0 < … < σ_T`.
 */
typedef struct DgSchedule DgSchedule;

/**
 * Parameters of a full sampling run.
 */
typedef struct DgSampleOptions {
  enum DgSamplerKind kind;
  double eta0;
  double cfg_w;
  double ge_gamma;
  uint64_t seed;
  /**
   * NULL for unconditional sampling.
   */
  const char *condition;
} DgSampleOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dg_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Valid until the next `dg_*` call on the same thread.
 */
const char *dg_last_error_message(void);

/**
 * Builds a schedule with `steps` intervals from `sigma_min` to `sigma_max`.
 *
 * # Safety
 * `out` must be a valid pointer to writable handle storage.
 */
enum DgStatus dg_schedule_new(enum DgScheduleKind kind,
                              size_t steps,
                              double sigma_min,
                              double sigma_max,
                              struct DgSchedule **out);

/**
 * Wraps explicit noise levels `sigmas[0..len]`, strictly increasing.
 *
 * # Safety
 * `sigmas` must point to `len` readable doubles; `out` must be writable.
 */
enum DgStatus dg_schedule_from_sigmas(const double *sigmas, size_t len, struct DgSchedule **out);

/**
 * # Safety
 * `schedule` must be NULL or a handle from this library not yet freed.
 */
void dg_schedule_free(struct DgSchedule *schedule);

/**
 * Number of steps `T`, or 0 for a NULL handle.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
size_t dg_schedule_steps(const struct DgSchedule *schedule);

/**
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum DgStatus dg_schedule_sigma(const struct DgSchedule *schedule, size_t t, double *out);

/**
 * Loads a mixture description from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DgStatus dg_mixture_load(const char *path_, struct DgMixture **out);

/**
 * Equal-weight point masses at `n_points` images of shape `c×h×w`, stored
 * back to back in `points`.
 *
 * # Safety
 * `points` must hold `n_points·c·h·w` readable doubles; `out` must be writable.
 */
enum DgStatus dg_mixture_empirical(const double *points,
                                   size_t n_points,
                                   size_t channels,
                                   size_t height,
                                   size_t width,
                                   struct DgMixture **out);

/**
 * # Safety
 * `mixture` must be NULL or a live handle.
 */
void dg_mixture_free(struct DgMixture *mixture);

/**
 * Writes the state shape accepted by the mixture.
 *
 * # Safety
 * `mixture` must be live; the three outputs must be writable.
 */
enum DgStatus dg_mixture_shape(const struct DgMixture *mixture,
                               size_t *channels,
                               size_t *height,
                               size_t *width);

/**
 * Exact noise prediction `ε̂(y, σ)`. `condition` may be NULL for the
 * unconditional model.
 *
 * # Safety
 * `y` and `out` must each hold `len` doubles, where `len` equals the
 * mixture dimension; `condition` must be NULL or NUL-terminated.
 */
enum DgStatus dg_mixture_predict_epsilon(const struct DgMixture *mixture,
                                         const double *y,
                                         size_t len,
                                         double sigma,
                                         const char *condition,
                                         double *out);

/**
 * Loads a surrogate saved by the `train` command.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum DgStatus dg_model_load(const char *path_, struct DgModel **out);

/**
 * # Safety
 * `model` must be NULL or a live handle.
 */
void dg_model_free(struct DgModel *model);

/**
 * 1 when the model exposes an image gradient, 0 otherwise or for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
int32_t dg_model_is_guidable(const struct DgModel *model);

/**
 * Predicted drag of one `c×h×w` image.
 *
 * # Safety
 * `image` must hold `c·h·w` doubles; `out` must be writable.
 */
enum DgStatus dg_model_predict_drag(const struct DgModel *model,
                                    const double *image,
                                    size_t channels,
                                    size_t height,
                                    size_t width,
                                    double *out);

/**
 * Gradient of the predicted drag with respect to every pixel.
 *
 * # Safety
 * `image` and `grad_out` must each hold `c·h·w` doubles.
 */
enum DgStatus dg_model_grad_drag(const struct DgModel *model,
                                 const double *image,
                                 size_t channels,
                                 size_t height,
                                 size_t width,
                                 double *grad_out);

/**
 * Plain DDIM step `x_{t−1} = x_t − (σ_t − σ_{t−1}) ε̂`.
 *
 * # Safety
 * `x`, `eps` and `out` must each hold `len` doubles.
 */
enum DgStatus dg_ddim_step(const struct DgSchedule *schedule,
                           size_t t,
                           const double *x,
                           const double *eps,
                           size_t len,
                           double *out);

/**
 * Drag-guided step in noise-prediction form.
 *
 * # Safety
 * `x`, `eps`, `drag_grad` and `out` must each hold `len` doubles.
 */
enum DgStatus dg_guided_step(const struct DgSchedule *schedule,
                             size_t t,
                             const double *x,
                             const double *eps,
                             const double *drag_grad,
                             size_t len,
                             double eta0,
                             double *out);

/**
 * The same update in projected-gradient form.
 *
 * # Safety
 * `x`, `eps`, `drag_grad` and `out` must each hold `len` doubles.
 */
enum DgStatus dg_pgd_step(const struct DgSchedule *schedule,
                          size_t t,
                          const double *x,
                          const double *eps,
                          const double *drag_grad,
                          size_t len,
                          double eta0,
                          double *out);

/**
 * Options matching the command-line defaults, with guidance disabled.
 */
struct DgSampleOptions dg_sample_options_default(void);

/**
 * Samples from `σ_T ε` down to `t = 0` and writes the final state.
 *
 * `model` may be NULL for unguided sampling. When it is given and
 * `drag_out` is not NULL, the predicted drag of the final state is
 * written there.
 *
 * # Safety
 * `final_out` must hold `len` doubles, `len` equal to the mixture
 * dimension; `options` must be readable.
 */
enum DgStatus dg_sample(const struct DgMixture *mixture,
                        const struct DgModel *model,
                        const struct DgSchedule *schedule,
                        const struct DgSampleOptions *options,
                        double *final_out,
                        size_t len,
                        double *drag_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRAGGUIDE_H */
