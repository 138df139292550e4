#ifndef NRDC_H
#define NRDC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NrdcStatus {
  NRDC_STATUS_OK = 0,
  NRDC_STATUS_NULL_POINTER = 1,
  NRDC_STATUS_INVALID_UTF8 = 2,
  NRDC_STATUS_INVALID_ARGUMENT = 3,
  NRDC_STATUS_CONFIG = 4,
  NRDC_STATUS_NUMERICAL = 5,
  NRDC_STATUS_IO = 6,
  NRDC_STATUS_BUFFER_TOO_SMALL = 7,
  NRDC_STATUS_PANIC = 8,
} NrdcStatus;

/**
 * Resolved experiment configuration.
 */
typedef struct NrdcConfig NrdcConfig;

/**
 * A trained policy together with its experiment result.
 */
typedef struct NrdcRun NrdcRun;

/**
 * Truncated signature of a piecewise-linear path.
 */
typedef struct NrdcSignature NrdcSignature;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *nrdc_last_error(void);

/**
 * Library version as a static string.
 */
const char *nrdc_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void nrdc_string_free(char *s);

/**
 * Loads a bundled preset. `profile` may be null for the full profile.
 */
enum NrdcStatus nrdc_config_from_preset(const char *name,
                                        const char *profile,
                                        struct NrdcConfig **config);

/**
 * Parses a TOML experiment config. `profile` may be null.
 */
enum NrdcStatus nrdc_config_from_toml(const char *text,
                                      const char *profile,
                                      struct NrdcConfig **config);

enum NrdcStatus nrdc_config_set_seed(struct NrdcConfig *config, uint64_t seed);

/**
 * Overrides the number of training iterations.
 */
enum NrdcStatus nrdc_config_set_batches(struct NrdcConfig *config, size_t batches);

/**
 * Resolved config as TOML; free with [`nrdc_string_free`].
 */
enum NrdcStatus nrdc_config_to_toml(const struct NrdcConfig *config, char **text);

void nrdc_config_free(struct NrdcConfig *config);

/**
 * Trains the configured policy and evaluates it on the fine grid.
 */
enum NrdcStatus nrdc_train(const struct NrdcConfig *config, size_t workers, struct NrdcRun **run);

/**
 * Mean and standard error of the final evaluation.
 */
enum NrdcStatus nrdc_run_evaluation(const struct NrdcRun *run, double *mean, double *std_error);

/**
 * Number of trainable parameters of the trained policy.
 */
enum NrdcStatus nrdc_run_param_count(const struct NrdcRun *run, size_t *count);

/**
 * Result JSON without the wall-clock field; free with [`nrdc_string_free`].
 */
enum NrdcStatus nrdc_run_result_json(const struct NrdcRun *run, char **json);

/**
 * Writes config snapshot, result, cost trace and checkpoint into `dir`.
 */
enum NrdcStatus nrdc_run_save(const struct NrdcRun *run, const char *dir);

void nrdc_run_free(struct NrdcRun *run);

/**
 * Resolution sweep; the table is returned as CSV.
 */
enum NrdcStatus nrdc_sweep_csv(const struct NrdcConfig *config, size_t workers, char **csv);

/**
 * Runs `trials` gradient checks; `passed` is set to 1 if all agree.
 */
enum NrdcStatus nrdc_gradcheck(uint64_t seed, size_t trials, int32_t *passed);

/**
 * Samples `count` noise paths into `buffer`, laid out as
 * `[trajectory][step][channel]`. `hurst = 0.5` gives Brownian increments.
 */
enum NrdcStatus nrdc_noise_increments(double hurst,
                                      size_t dim,
                                      double horizon,
                                      size_t steps,
                                      uint64_t seed,
                                      size_t count,
                                      double *buffer,
                                      size_t len);

/**
 * Signature up to `level` of the path of `points` points in `dim`
 * dimensions, stored row-major in `values`.
 */
enum NrdcStatus nrdc_signature_of_path(const double *values,
                                       size_t points,
                                       size_t dim,
                                       size_t level,
                                       struct NrdcSignature **signature);

/**
 * Chen product `a ⊗ b` of two signatures with the same shape.
 */
enum NrdcStatus nrdc_signature_concat(const struct NrdcSignature *a,
                                      const struct NrdcSignature *b,
                                      struct NrdcSignature **signature);

/**
 * Coefficient of the word `letters[0..len]` (0-based letters).
 */
enum NrdcStatus nrdc_signature_coeff(const struct NrdcSignature *signature,
                                     const size_t *letters,
                                     size_t len,
                                     double *value);

/**
 * Number of values in the flattened signature (all levels).
 */
enum NrdcStatus nrdc_signature_len(const struct NrdcSignature *signature, size_t *len);

/**
 * Copies the flattened signature, level 0 first, into `buffer`.
 */
enum NrdcStatus nrdc_signature_values(const struct NrdcSignature *signature,
                                      double *buffer,
                                      size_t len);

void nrdc_signature_free(struct NrdcSignature *signature);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NRDC_H */
