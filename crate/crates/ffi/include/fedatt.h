#ifndef FEDATT_H
#define FEDATT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FedattStatus {
  FEDATT_STATUS_OK = 0,
  FEDATT_STATUS_NULL_POINTER = 1,
  FEDATT_STATUS_INVALID_ARGUMENT = 2,
  FEDATT_STATUS_SCHEMA_MISMATCH = 3,
  FEDATT_STATUS_INVALID_CONFIG = 4,
  FEDATT_STATUS_RUNTIME_ABORT = 5,
  FEDATT_STATUS_IO = 6,
  FEDATT_STATUS_VERIFICATION_FAILED = 7,
  FEDATT_STATUS_PANIC = 8,
} FedattStatus;

typedef enum FedattStrategy {
  FEDATT_STRATEGY_FEDAVG = 0,
  FEDATT_STRATEGY_FEDATT = 1,
} FedattStrategy;

/**
 * Opaque parameter set.
 */
typedef struct FedattParams FedattParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (always
 * nul-terminated when `len > 0`) and returns the full message length in
 * bytes, excluding the terminator. Returns 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fedatt_last_error(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *fedatt_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fedatt_string_free(char *s);

/**
 * Parses a parameter set from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum FedattStatus fedatt_params_from_json(const char *json, struct FedattParams **out);

/**
 * Serializes a parameter set to JSON. Free the result with
 * [`fedatt_string_free`].
 *
 * # Safety
 * `params` must be a live handle; `out` must be writable.
 */
enum FedattStatus fedatt_params_to_json(const struct FedattParams *params, char **out);

/**
 * Number of layers in a parameter set; 0 for a null handle.
 *
 * # Safety
 * `params` must be null or a live handle.
 */
size_t fedatt_params_num_layers(const struct FedattParams *params);

/**
 * Total number of scalar parameters; 0 for a null handle.
 *
 * # Safety
 * `params` must be null or a live handle.
 */
size_t fedatt_params_num_values(const struct FedattParams *params);

/**
 * Releases a parameter set. Null is ignored.
 *
 * # Safety
 * `params` must come from this library and not have been freed.
 */
void fedatt_params_free(struct FedattParams *params);

/**
 * One server aggregation step. `sample_counts` may be null; it is only
 * read for FedAvg with `data_proportional` set. `epsilon` is ignored by
 * FedAvg. `loss_out` may be null.
 *
 * # Safety
 * `clients` must point to `num_clients` live handles and `sample_counts`
 * (when non-null) to `num_clients` values; `out` must be writable.
 */
enum FedattStatus fedatt_aggregate(const struct FedattParams *global,
                                   const struct FedattParams *const *clients,
                                   size_t num_clients,
                                   const size_t *sample_counts,
                                   enum FedattStrategy strategy,
                                   double epsilon,
                                   bool data_proportional,
                                   struct FedattParams **out,
                                   double *loss_out);

/**
 * Writes FedAtt attention weights row-major as `[layer][client]` into
 * `weights` (`num_layers × num_clients` values).
 *
 * # Safety
 * `clients` must point to `num_clients` live handles; `weights` must point
 * to `weights_len` writable values.
 */
enum FedattStatus fedatt_attention_weights(const struct FedattParams *global,
                                           const struct FedattParams *const *clients,
                                           size_t num_clients,
                                           double *weights,
                                           size_t weights_len);

/**
 * Runs a scenario described by `config_json`, writing CSV outputs into
 * `out_dir` (null to skip writing). `threads == 0` uses every core.
 *
 * # Safety
 * String arguments must be null or nul-terminated.
 */
enum FedattStatus fedatt_run_scenario(const char *config_json,
                                      const char *out_dir,
                                      size_t threads,
                                      bool checkpoint);

/**
 * Gradient checks for the three learner kinds. Writes each kind's maximum
 * relative error into `max_errors` (linear, MLP, LSTM order) when non-null
 * and returns `VerificationFailed` if any exceeds the tolerance.
 *
 * # Safety
 * `max_errors` must be null or point to 3 writable values.
 */
enum FedattStatus fedatt_gradcheck(double *max_errors);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDATT_H */
