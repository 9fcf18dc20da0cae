#ifndef DAYNIGHT_H
#define DAYNIGHT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum DnStatus {
  DN_STATUS_OK = 0,
  DN_STATUS_NULL_POINTER = 1,
  DN_STATUS_INVALID_ARGUMENT = 2,
  DN_STATUS_CONFIG = 3,
  DN_STATUS_DOMAIN = 4,
  DN_STATUS_ENVIRONMENT = 5,
  DN_STATUS_CHECKPOINT = 6,
  DN_STATUS_IO = 7,
  DN_STATUS_INTERNAL = 8,
  DN_STATUS_PANIC = 9,
} DnStatus;

/**
 * Opaque environment handle.
 */
typedef struct DnEnv DnEnv;

/**
 * Opaque handle to a world model and agent restored from a checkpoint.
 */
typedef struct DnModel DnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 * `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dn_last_error(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum DnStatus dn_symlog(double x, double *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum DnStatus dn_symexp(double y, double *out);

/**
 * Two-hot encoding of `value` over `bins` buckets evenly spaced in `[lo, hi]`.
 *
 * # Safety
 * `weights` must point to `bins` writable doubles.
 */
enum DnStatus dn_two_hot_encode(double value, size_t bins, double lo, double hi, double *weights);

/**
 * Expected bucket value under `weights`.
 *
 * # Safety
 * `weights` must point to `bins` doubles and `out` must be valid.
 */
enum DnStatus dn_two_hot_decode(const double *weights,
                                size_t bins,
                                double lo,
                                double hi,
                                double *out);

/**
 * Generalized advantage estimates for `len` transitions. `values` holds
 * `len + 1` entries, the last being the bootstrap value.
 *
 * # Safety
 * `rewards`, `continues` and `advantages` must hold `len` doubles and
 * `values` `len + 1`.
 */
enum DnStatus dn_gae(const double *rewards,
                     const double *values,
                     const double *continues,
                     size_t len,
                     double gamma,
                     double lambda,
                     double *advantages);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum DnStatus dn_shape_reward(double reward,
                              bool cont,
                              bool success,
                              double failure_penalty,
                              double reward_scale,
                              double *out);

/**
 * Bytes in one observation (`64 * 64 * 3`, row-major RGB).
 */
size_t dn_observation_len(void);

/**
 * Creates an environment by name. `test_levels` selects the full level
 * distribution instead of the training subset.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `env` a valid pointer.
 */
enum DnStatus dn_env_create(const char *name,
                            uint64_t train_levels,
                            bool test_levels,
                            struct DnEnv **env);

/**
 * # Safety
 * `env` must be null or a handle from [`dn_env_create`] not yet freed.
 */
void dn_env_free(struct DnEnv *env);

/**
 * # Safety
 * `env` must be a live handle and `count` a valid pointer.
 */
enum DnStatus dn_env_action_count(const struct DnEnv *env, size_t *count);

/**
 * Resets to the level generated from `level_seed` and writes the first
 * observation.
 *
 * # Safety
 * `env` must be a live handle; `observation` must hold
 * [`dn_observation_len`] bytes.
 */
enum DnStatus dn_env_reset(struct DnEnv *env, uint64_t level_seed, uint8_t *observation);

/**
 * Takes one step. `cont` is false exactly when the episode ended.
 *
 * # Safety
 * `env` must be a live handle; `observation` must hold
 * [`dn_observation_len`] bytes; the scalar outputs must be valid pointers.
 */
enum DnStatus dn_env_step(struct DnEnv *env,
                          size_t action,
                          uint8_t *observation,
                          double *reward,
                          bool *cont,
                          bool *success);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `model` a valid pointer.
 */
enum DnStatus dn_model_load(const char *path, struct DnModel **model);

/**
 * # Safety
 * `model` must be null or a handle from [`dn_model_load`] not yet freed.
 */
void dn_model_free(struct DnModel *model);

/**
 * Imagines `batch` trajectories from random latent states under the
 * augmentation `mode` and writes their mean per-step reward. Successive
 * calls draw fresh randomness.
 *
 * # Safety
 * `model` must be a live handle, `mode` a NUL-terminated string and
 * `mean_reward` a valid pointer.
 */
enum DnStatus dn_model_dream(struct DnModel *model,
                             const char *mode,
                             size_t batch,
                             double *mean_reward);

/**
 * Writes a PNG gallery of decoded dream states to `out_dir`.
 *
 * # Safety
 * `model` must be a live handle; `mode` and `out_dir` NUL-terminated strings.
 */
enum DnStatus dn_model_export_dreams(const struct DnModel *model,
                                     const char *mode,
                                     size_t count,
                                     const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAYNIGHT_H */
