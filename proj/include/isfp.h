/* C API for the intermediate-service-facility planning solver.
 *
 * All functions are thread-compatible: distinct handles may be used from
 * distinct threads concurrently. Error details for the calling thread are
 * available from isfp_last_error().
 */
#ifndef ISFP_H
#define ISFP_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ISFP_API __declspec(dllexport)
#else
#define ISFP_API __attribute__((visibility("default")))
#endif

/* Status codes; the first four match the CLI exit-code contract. */
typedef enum isfp_status {
    ISFP_OK = 0,
    ISFP_VERIFY_FAILED = 1,
    ISFP_CONFIG_ERROR = 2,
    ISFP_NOT_CONVERGED = 3,
    ISFP_INVALID_ARGUMENT = 4,
    ISFP_INTERNAL_ERROR = 5
} isfp_status;

typedef struct isfp_config isfp_config;   /* opaque run configuration */
typedef struct isfp_result isfp_result;   /* opaque equilibrium solution */

ISFP_API const char* isfp_version(void);

/* Message for the most recent failure on this thread; never NULL. */
ISFP_API const char* isfp_last_error(void);

ISFP_API isfp_status isfp_config_load(const char* path, isfp_config** out);

/* Override one value, e.g. isfp_config_set(cfg, "solver.threads", "4").
 * Keys use the same section.key names as the config file. */
ISFP_API isfp_status isfp_config_set(isfp_config* cfg, const char* section_key,
                                     const char* value);

ISFP_API void isfp_config_free(isfp_config* cfg);

/* Log text produced by the most recent pipeline run on this config. */
ISFP_API const char* isfp_config_log(const isfp_config* cfg);

/* Solves the equilibrium. On ISFP_OK or ISFP_NOT_CONVERGED a result handle is
 * produced (the latter holds the best iterate). */
ISFP_API isfp_status isfp_solve(isfp_config* cfg, isfp_result** out);

/* Scalar fields: "market_residual", "duality_gap", "wardrop_gap",
 * "iterations", "converged", "profit", "capacity.<node>",
 * "supply.<node>.<scenario>", "price.<node>.<scenario>". */
ISFP_API isfp_status isfp_result_get(const isfp_result* res, const char* field,
                                     double* out);

/* Writes summary.json and the CSV set into the directory (defaults to the
 * config's output dir when out_dir is NULL). */
ISFP_API isfp_status isfp_result_write(const isfp_result* res, const char* out_dir);

ISFP_API void isfp_result_free(isfp_result* res);

/* End-to-end pipelines; artifacts land in the config's output directory and
 * human-readable logs in isfp_config_log(). */
ISFP_API isfp_status isfp_run_solve(isfp_config* cfg);
ISFP_API isfp_status isfp_run_metrics(isfp_config* cfg);
ISFP_API isfp_status isfp_run_sweep(isfp_config* cfg);
ISFP_API isfp_status isfp_run_verify(isfp_config* cfg, const char* solution_path);

#ifdef __cplusplus
}
#endif

#endif /* ISFP_H */
