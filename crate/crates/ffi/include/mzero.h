#ifndef MZERO_H
#define MZERO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum MzStatus {
  MZ_STATUS_OK = 0,
  MZ_STATUS_NULL_POINTER = 1,
  MZ_STATUS_INVALID_ARGUMENT = 2,
  MZ_STATUS_INVALID_ACTION = 3,
  MZ_STATUS_TERMINAL = 4,
  MZ_STATUS_BUFFER_TOO_SMALL = 5,
  MZ_STATUS_CONFIG = 6,
  MZ_STATUS_CHECKPOINT = 7,
  MZ_STATUS_NON_FINITE = 8,
  MZ_STATUS_IO = 9,
  MZ_STATUS_PANIC = 10,
} MzStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct MzConfig MzConfig;

/**
 * Opaque environment handle.
 */
typedef struct MzEnv MzEnv;

/**
 * Opaque network handle.
 */
typedef struct MzNet MzNet;

/**
 * Outcome of one environment step.
 */
typedef struct MzStep {
  double reward;
  bool done;
} MzStep;

/**
 * Loss weights in the order alpha, beta, gamma_w, delta.
 */
typedef struct MzWeights {
  double alpha;
  double beta;
  double gamma_w;
  double delta;
} MzWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread. Valid until the next failing call.
 */
const char *mz_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mz_version(void);

/**
 * Creates an environment by name (`cartpole`, `tictactoe`, `minigrid`).
 * `grid_size` is only read for MiniGrid.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MzStatus mz_env_new(const char *kind, size_t grid_size, struct MzEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`mz_env_new`] not yet freed.
 */
void mz_env_free(struct MzEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
enum MzStatus mz_env_sizes(const struct MzEnv *env, size_t *observation_size, size_t *action_size);

/**
 * Resets the episode and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` must hold `cap` doubles.
 */
enum MzStatus mz_env_reset(struct MzEnv *env,
                           uint64_t seed,
                           double *obs,
                           size_t cap,
                           size_t *obs_len);

/**
 * # Safety
 * `env` must be a live handle; `out` must be writable.
 */
enum MzStatus mz_env_step(struct MzEnv *env, size_t action, struct MzStep *out);

/**
 * # Safety
 * `env` must be a live handle; `obs` must hold `cap` doubles.
 */
enum MzStatus mz_env_observation(const struct MzEnv *env, double *obs, size_t cap, size_t *obs_len);

/**
 * Writes the legal action indices.
 *
 * # Safety
 * `env` must be a live handle; `actions` must hold `cap` entries.
 */
enum MzStatus mz_env_legal_actions(const struct MzEnv *env,
                                   size_t *actions,
                                   size_t cap,
                                   size_t *len);

/**
 * # Safety
 * `env` must be a live handle; `done` must be writable.
 */
enum MzStatus mz_env_is_terminal(const struct MzEnv *env, bool *done);

/**
 * Builds the preset configuration for a preset name, environment and grid size.
 *
 * # Safety
 * `preset` and `env` must be NUL-terminated strings; `out` must be writable.
 */
enum MzStatus mz_config_preset(const char *preset,
                               const char *env,
                               size_t grid_size,
                               struct MzConfig **out);

/**
 * Parses a configuration from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum MzStatus mz_config_from_toml(const char *toml, struct MzConfig **out);

/**
 * Applies one `key=value` override (dotted keys for nested sections).
 *
 * # Safety
 * `cfg` must be a live handle and `assignment` a NUL-terminated string.
 */
enum MzStatus mz_config_set(struct MzConfig *cfg, const char *assignment);

/**
 * Serialises the configuration as TOML. Free the result with [`mz_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum MzStatus mz_config_to_toml(const struct MzConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a live handle.
 */
void mz_config_free(struct MzConfig *cfg);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void mz_string_free(char *s);

/**
 * Trains one seed, writing metrics and checkpoints under the config's output directory.
 *
 * # Safety
 * `cfg` must be a live handle; `final_reward` may be null.
 */
enum MzStatus mz_run_seed(const struct MzConfig *cfg, uint64_t seed, double *final_reward);

/**
 * Freshly initialised network for a configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum MzStatus mz_net_new(const struct MzConfig *cfg, uint64_t seed, struct MzNet **out);

/**
 * Loads a checkpoint written for the given configuration.
 *
 * # Safety
 * `cfg` must be a live handle, `path` a NUL-terminated string, `out` writable.
 */
enum MzStatus mz_net_load(const struct MzConfig *cfg, const char *path, struct MzNet **out);

/**
 * # Safety
 * `net` must be null or a live handle.
 */
void mz_net_free(struct MzNet *net);

/**
 * Scalar value and policy probabilities for one observation.
 *
 * # Safety
 * `net` must be a live handle; `obs` must hold `obs_len` doubles and `policy` `cap` doubles.
 */
enum MzStatus mz_net_initial_inference(const struct MzNet *net,
                                       const double *obs,
                                       size_t obs_len,
                                       double *value,
                                       double *policy,
                                       size_t cap,
                                       size_t *policy_len);

/**
 * Runs a search from the environment's current state with the config's search settings.
 * Writes the root visit distribution and root value.
 *
 * # Safety
 * All handles must be live; `policy` must hold `cap` doubles.
 */
enum MzStatus mz_search(const struct MzNet *net,
                        const struct MzConfig *cfg,
                        const struct MzEnv *env,
                        uint64_t seed,
                        double *policy,
                        size_t cap,
                        size_t *policy_len,
                        double *root_value);

/**
 * Normalises value and policy weight pairs to sum to one.
 *
 * # Safety
 * `out` must be writable.
 */
enum MzStatus mz_scale_weights(struct MzWeights w, struct MzWeights *out);

/**
 * n-step bootstrapped value at index `t` of a path of length `horizon`.
 * `rewards[j]` is the reward for the transition into index `j` (`rewards[0]` is unused);
 * both `rewards` and `values` hold `horizon + 1` entries.
 *
 * # Safety
 * The buffers must hold the stated number of doubles; `out` must be writable.
 */
enum MzStatus mz_n_step_value(const double *rewards,
                              const double *values,
                              size_t horizon,
                              size_t t,
                              size_t n,
                              double discount,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MZERO_H */
