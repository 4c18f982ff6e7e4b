#ifndef FEDGSP_H
#define FEDGSP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FG_GROWTH_LINEAR 0

#define FG_GROWTH_LOG 1

#define FG_GROWTH_EXP 2

typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_ARGUMENT = 2,
  FG_STATUS_CONFIG_ERROR = 3,
  FG_STATUS_RUNTIME_ERROR = 4,
  FG_STATUS_OUT_OF_RANGE = 5,
  FG_STATUS_BUFFER_TOO_SMALL = 6,
  FG_STATUS_PANIC = 7,
} FgStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct FgConfig FgConfig;

/**
 * A grouping of clients.
 */
typedef struct FgPlan FgPlan;

/**
 * A finished experiment: per-round records and final parameters.
 */
typedef struct FgRun FgRun;

/**
 * One row of a run's per-round metrics.
 */
typedef struct FgRoundRecord {
  uint64_t round;
  uint64_t groups;
  uint64_t sampled_groups;
  double accuracy;
  double loss;
  double median_group_cpd;
  double t_comp_cum_s;
  double t_comm_cum_s;
  double d_comm_cum_mb;
} FgRoundRecord;

/**
 * Cost-model constants and workload.
 */
typedef struct FgCostParams {
  double n_calc;
  double n_aggr;
  double t_flops;
  double model_size_mb;
  double rate_in_mbps;
  double rate_out_mbps;
  double samples_per_client;
  double local_epochs;
  double num_clients;
  double kappa;
} FgCostParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's most recent failure, or NULL if the last
 * call succeeded. Free with [`fg_string_free`].
 */
char *fg_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string from this library not yet freed.
 */
void fg_string_free(char *s);

/**
 * Library version, statically allocated.
 */
const char *fg_version(void);

/**
 * Parses configuration text in the `key = value` format.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out_config` must be writable.
 */
enum FgStatus fg_config_parse(const char *text, struct FgConfig **out_config);

/**
 * Sets one key, as a `--set key=value` override would.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum FgStatus fg_config_set(struct FgConfig *config, const char *key, const char *value);

/**
 * Canonical text of the configuration.
 *
 * # Safety
 * `config` must be a live handle; `out_text` must be writable.
 */
enum FgStatus fg_config_to_text(const struct FgConfig *config, char **out_text);

/**
 * Hex SHA-256 of the canonical text.
 *
 * # Safety
 * `config` must be a live handle; `out_hash` must be writable.
 */
enum FgStatus fg_config_hash(const struct FgConfig *config, char **out_hash);

/**
 * # Safety
 * `config` must be NULL or a live handle.
 */
void fg_config_free(struct FgConfig *config);

/**
 * Runs every configured round in memory.
 *
 * # Safety
 * `config` must be a live handle; `out_run` must be writable.
 */
enum FgStatus fg_run_experiment(const struct FgConfig *config, struct FgRun **out_run);

/**
 * # Safety
 * `run` must be a live handle; `out_count` must be writable.
 */
enum FgStatus fg_run_round_count(const struct FgRun *run, size_t *out_count);

/**
 * Record of round `index + 1`.
 *
 * # Safety
 * `run` must be a live handle; `out_record` must be writable.
 */
enum FgStatus fg_run_record(const struct FgRun *run,
                            size_t index,
                            struct FgRoundRecord *out_record);

/**
 * # Safety
 * `run` must be a live handle; `out_count` must be writable.
 */
enum FgStatus fg_run_param_count(const struct FgRun *run, size_t *out_count);

/**
 * Copies the final flat parameter vector into `buf`, which must hold at
 * least [`fg_run_param_count`] values.
 *
 * # Safety
 * `run` must be a live handle; `buf` valid for `len` writes.
 */
enum FgStatus fg_run_params(const struct FgRun *run, double *buf, size_t len);

/**
 * # Safety
 * `run` must be NULL or a live handle.
 */
void fg_run_free(struct FgRun *run);

/**
 * Class probability distance between two count vectors of `classes` entries.
 *
 * # Safety
 * `a` and `b` must be valid for `classes` reads; `out_cpd` writable.
 */
enum FgStatus fg_cpd(const uint64_t *a,
                     const uint64_t *b,
                     size_t classes,
                     double sigma,
                     double *out_cpd);

/**
 * Group count `f(round)` of a growth schedule (`FG_GROWTH_*`), saturating
 * at `UINT64_MAX`.
 *
 * # Safety
 * `out_groups` must be writable.
 */
enum FgStatus fg_growth_eval(uint32_t kind,
                             double alpha,
                             uint64_t beta,
                             uint64_t round,
                             uint64_t *out_groups);

/**
 * Default hardware constants with the given workload.
 *
 * # Safety
 * `out_params` must be writable.
 */
enum FgStatus fg_cost_params_default(double samples_per_client,
                                     double local_epochs,
                                     double num_clients,
                                     double kappa,
                                     struct FgCostParams *out_params);

/**
 * Total computation time over `rounds` rounds with group counts `groups`.
 *
 * # Safety
 * `groups` valid for `rounds` reads; `params` readable; `out_seconds` writable.
 */
enum FgStatus fg_t_comp(const double *groups,
                        size_t rounds,
                        const struct FgCostParams *params,
                        double *out_seconds);

/**
 * Total communication time over `rounds` rounds.
 *
 * # Safety
 * `params` readable; `out_seconds` writable.
 */
enum FgStatus fg_t_comm(double rounds, const struct FgCostParams *params, double *out_seconds);

/**
 * Total communicated megabytes over `rounds` rounds.
 *
 * # Safety
 * `params` readable; `out_mb` writable.
 */
enum FgStatus fg_d_comm(double rounds, const struct FgCostParams *params, double *out_mb);

/**
 * Inter-cluster grouping of `clients` clients whose class counts are laid
 * out row-major in `counts` (`clients * classes` values).
 *
 * # Safety
 * `counts` valid for `clients * classes` reads; `out_plan` writable.
 */
enum FgStatus fg_group_clients(const uint64_t *counts,
                               size_t clients,
                               size_t classes,
                               size_t groups,
                               uint64_t round,
                               uint64_t seed,
                               struct FgPlan **out_plan);

/**
 * # Safety
 * `plan` must be a live handle; `out_count` writable.
 */
enum FgStatus fg_plan_group_count(const struct FgPlan *plan, size_t *out_count);

/**
 * # Safety
 * `plan` must be a live handle; `out_len` writable.
 */
enum FgStatus fg_plan_group_len(const struct FgPlan *plan, size_t group, size_t *out_len);

/**
 * Copies group `group`'s client ids, in training order, into `buf`.
 *
 * # Safety
 * `plan` must be a live handle; `buf` valid for `len` writes.
 */
enum FgStatus fg_plan_group(const struct FgPlan *plan, size_t group, size_t *buf, size_t len);

/**
 * JSON form `{"round":..,"groups":[[..],..],"unassigned":[..]}`.
 *
 * # Safety
 * `plan` must be a live handle; `out_json` writable.
 */
enum FgStatus fg_plan_to_json(const struct FgPlan *plan, char **out_json);

/**
 * # Safety
 * `plan` must be NULL or a live handle.
 */
void fg_plan_free(struct FgPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDGSP_H */
