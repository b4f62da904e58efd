/* C interface to the audiocil toolkit. All functions return an aucil_status;
 * on failure aucil_last_error() describes the error for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * aucil_string_free. */
#ifndef AUDIOCIL_AUDIOCIL_H
#define AUDIOCIL_AUDIOCIL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AUDIOCIL_API __declspec(dllexport)
#else
#define AUDIOCIL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aucil_status {
  AUCIL_OK = 0,
  AUCIL_E_INVALID_ARGUMENT = 1,
  AUCIL_E_DIVISIBILITY = 2,
  AUCIL_E_DUPLICATE_LABEL = 3,
  AUCIL_E_INIT_CLS_TOO_LARGE = 4,
  AUCIL_E_OUT_OF_RANGE = 5,
  AUCIL_E_INSUFFICIENT_DATA = 6,
  AUCIL_E_UNKNOWN_REGISTRY_KEY = 7,
  AUCIL_E_IO = 8,
  AUCIL_E_CORRUPT_DATA = 9,
  AUCIL_E_DIMENSION_MISMATCH = 10,
  AUCIL_E_DEGENERATE = 11,
  AUCIL_E_BUDGET = 12,
  AUCIL_E_NUMERICAL = 13,
  AUCIL_E_CONFIG = 14,
  AUCIL_E_NOT_CONVERGED = 15,
  AUCIL_E_STATE = 16,
  AUCIL_E_INTERNAL = 99
} aucil_status;

typedef struct aucil_config aucil_config;
typedef struct aucil_results aucil_results;

AUDIOCIL_API const char* aucil_version(void);
AUDIOCIL_API const char* aucil_last_error(void);
AUDIOCIL_API void aucil_string_free(char* s);

AUDIOCIL_API aucil_status aucil_config_parse(const char* json_text, aucil_config** out);
AUDIOCIL_API aucil_status aucil_config_load(const char* path, aucil_config** out);
AUDIOCIL_API void aucil_config_free(aucil_config* config);
AUDIOCIL_API aucil_status aucil_config_set_seed(aucil_config* config, uint64_t seed);
AUDIOCIL_API aucil_status aucil_config_set_output_dir(aucil_config* config, const char* dir);
AUDIOCIL_API aucil_status aucil_config_set_plot(aucil_config* config, int enabled);
AUDIOCIL_API aucil_status aucil_config_to_json(const aucil_config* config, char** out);

/* Runs every task. On a stage failure the partial bundle is still written to
 * the configured output directory and *out is left NULL. */
AUDIOCIL_API aucil_status aucil_run_experiment(const aucil_config* config, aucil_results** out);
AUDIOCIL_API void aucil_results_free(aucil_results* results);
AUDIOCIL_API aucil_status aucil_results_to_json(const aucil_results* results, char** out);
AUDIOCIL_API aucil_status aucil_results_write(const aucil_results* results, const char* path);
AUDIOCIL_API aucil_status aucil_results_num_stages(const aucil_results* results, size_t* out);
AUDIOCIL_API aucil_status aucil_results_stage_accuracy(const aucil_results* results, size_t stage, double* out);
AUDIOCIL_API aucil_status aucil_results_average_accuracy(const aucil_results* results, double* out);

/* One curve per results file; all files must share the schedule shape. */
AUDIOCIL_API aucil_status aucil_plot(const char* const* result_paths, size_t n_paths, const char* out_path);

/* JSON arrays of {key, description, ...} registry entries. */
AUDIOCIL_API aucil_status aucil_list_models(char** out_json);
AUDIOCIL_API aucil_status aucil_list_datasets(char** out_json);

#ifdef __cplusplus
}
#endif

#endif
