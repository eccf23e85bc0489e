#ifndef COBO_H
#define COBO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CoboStatus {
  COBO_STATUS_OK = 0,
  COBO_STATUS_NULL_POINTER = 1,
  COBO_STATUS_INVALID_UTF8 = 2,
  COBO_STATUS_INVALID_CONFIG = 3,
  COBO_STATUS_PARSE_ERROR = 4,
  COBO_STATUS_UNKNOWN_ALGORITHM = 5,
  COBO_STATUS_NOT_APPLICABLE = 6,
  COBO_STATUS_NON_FINITE = 7,
  COBO_STATUS_IO = 8,
  COBO_STATUS_BUFFER_TOO_SMALL = 9,
  COBO_STATUS_PANIC = 10,
} CoboStatus;

// Parsed and validated experiment configuration.
typedef struct CoboConfig CoboConfig;

// Result of one training run.
typedef struct CoboTrajectory CoboTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Empty after a successful
// call. Valid until the next `cobo_*` call on the same thread.
const char *cobo_last_error(void);

// Library version as a static NUL-terminated string.
const char *cobo_version(void);

// Parses a JSON experiment config.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CoboStatus cobo_config_from_json(const char *json, struct CoboConfig **out);

// Overrides the training seed.
//
// # Safety
// `config` must come from `cobo_config_from_json`.
enum CoboStatus cobo_config_set_seed(struct CoboConfig *config, uint64_t seed);

// Serializes the config (with defaults filled in) to JSON.
//
// # Safety
// `config` must come from `cobo_config_from_json`; `out` must be valid.
enum CoboStatus cobo_config_to_json(const struct CoboConfig *config, char **out);

// # Safety
// `config` must come from `cobo_config_from_json` or be null.
void cobo_config_free(struct CoboConfig *config);

// Builds the configured task set and trains `algorithm` on it
// (`"cobo"`, `"local"`, `"fedavg"`, `"finetune_fedavg"`, `"ditto"`,
// `"ifca"` or `"oracle"`).
//
// # Safety
// `config` must come from `cobo_config_from_json`, `algorithm` must be a
// NUL-terminated string and `out` a valid pointer.
enum CoboStatus cobo_run(const struct CoboConfig *config,
                         const char *algorithm,
                         struct CoboTrajectory **out);

// # Safety
// `traj` must come from `cobo_run` or be null.
void cobo_trajectory_free(struct CoboTrajectory *traj);

// Number of metric records (round 0 plus one per recorded round).
//
// # Safety
// `traj` must come from `cobo_run`.
size_t cobo_trajectory_num_records(const struct CoboTrajectory *traj);

// Number of clients.
//
// # Safety
// `traj` must come from `cobo_run`.
size_t cobo_trajectory_num_clients(const struct CoboTrajectory *traj);

// Mean client loss at the last record.
//
// # Safety
// `traj` must come from `cobo_run`; `out` must be valid.
enum CoboStatus cobo_trajectory_final_loss(const struct CoboTrajectory *traj, double *out);

// Recovery error at the last record. Returns `NotApplicable` in simplex mode.
//
// # Safety
// `traj` must come from `cobo_run`; `out` must be valid.
enum CoboStatus cobo_trajectory_final_recovery_error(const struct CoboTrajectory *traj,
                                                     double *out);

// Copies the final n x n collaboration matrix, row-major, into `buf`.
// `len` is the capacity of `buf`; `BufferTooSmall` is returned if it is
// below n*n.
//
// # Safety
// `traj` must come from `cobo_run`; `buf` must hold `len` doubles.
enum CoboStatus cobo_trajectory_final_weights(const struct CoboTrajectory *traj,
                                              double *buf,
                                              size_t len);

// Per-round metrics as CSV text, in the same format the CLI writes.
//
// # Safety
// `traj` must come from `cobo_run`; `out` must be valid.
enum CoboStatus cobo_trajectory_metrics_csv(const struct CoboTrajectory *traj, char **out);

// Runs the bound check for a quadratic task config. Writes the report as
// JSON to `out_json` and whether a bound was violated to `out_violated`.
//
// # Safety
// `config` must come from `cobo_config_from_json`; out-pointers must be valid.
enum CoboStatus cobo_verify_theory(const struct CoboConfig *config,
                                   char **out_json,
                                   bool *out_violated);

// # Safety
// `s` must be a string returned by this library, or null.
void cobo_string_free(char *s);

// Euclidean projection of `input` onto the probability simplex.
// `input` and `output` may alias.
//
// # Safety
// Both buffers must hold `len` doubles.
enum CoboStatus cobo_project_simplex(const double *input, double *output, size_t len);

// Entrywise clamp of `input` to [0, 1]. `input` and `output` may alias.
//
// # Safety
// Both buffers must hold `len` doubles.
enum CoboStatus cobo_project_box(const double *input, double *output, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COBO_H */
