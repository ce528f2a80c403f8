/* C interface to the rulex library.
 *
 * Objects are opaque handles created by the load and resolve functions and
 * released by the matching free function. Every fallible call returns an rx_status;
 * on failure rx_last_error() describes the problem (per thread, valid until
 * the next call on that thread). Strings returned through char** are owned
 * by the caller and must be released with rx_string_free.
 */
#ifndef RULEX_RULEX_H
#define RULEX_RULEX_H

#include <stddef.h>
#include <stdint.h>

#if defined(RULEX_BUILDING_LIBRARY)
#define RX_API __attribute__((visibility("default")))
#else
#define RX_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rx_status {
  RX_OK = 0,
  RX_ERR_DIMENSION = 1,
  RX_ERR_INDEX = 2,
  RX_ERR_CONTRACT = 3,
  RX_ERR_CONFIG = 4,
  RX_ERR_IO = 5,
  RX_ERR_NUMERIC = 6,
  RX_ERR_NETWORK = 7,
  RX_ERR_INVALID_ARGUMENT = 8, /* null handle or pointer */
  RX_ERR_INTERNAL = 9
} rx_status;

typedef struct rx_config rx_config;
typedef struct rx_model rx_model;

RX_API const char* rx_version(void);
RX_API const char* rx_last_error(void);
RX_API const char* rx_status_name(rx_status status);
RX_API void rx_string_free(char* s);

/* Configuration: defaults <- file (may be NULL) <- "key.path=value" overrides. */
RX_API rx_status rx_config_resolve(const char* path, const char* const* overrides, size_t n_overrides, rx_config** out);
RX_API rx_status rx_config_from_manifest(const char* manifest_path, rx_config** out);
/* Full manifest as JSON. */
RX_API rx_status rx_config_to_json(const rx_config* config, char** out_json);
RX_API void rx_config_free(rx_config* config);

typedef void (*rx_log_fn)(const char* message, void* user);
typedef void (*rx_step_fn)(uint64_t seed, uint64_t step, double loss, double lr, int is_eval, void* user);

/* Runs the configured experiment into `dir` and returns the evaluation report. */
RX_API rx_status rx_experiment_run(const rx_config* config, const char* dir, rx_log_fn log, rx_step_fn step, void* user,
                                   char** out_report_json);

/* Writes `count` episodes of `regime` (fewshot, partial, control, inweights,
 * inweights_eval, rulepretrain) as JSONL (binary == 0) or RXSQ binary. */
RX_API rx_status rx_dataset_generate(const rx_config* config, const char* regime, size_t count, uint64_t seed,
                                     const char* path, int binary);
/* Reads either format back and reports the episode count and invariant violations. */
RX_API rx_status rx_dataset_check(const rx_config* config, const char* path, int binary, size_t* out_count,
                                  size_t* out_violations);

RX_API rx_status rx_model_load(const char* checkpoint_stem, rx_model** out);
/* {"config": ..., "metadata": ...} */
RX_API rx_status rx_model_info(const rx_model* model, char** out_json);
/* Tokens are [length, dim] row-major; probs receives label_vocab_size values. */
RX_API rx_status rx_model_predict(const rx_model* model, const float* tokens, size_t length, size_t dim, float* probs,
                                  size_t probs_len, size_t* out_label);
/* regime may be NULL to use the checkpoint's training regime. */
RX_API rx_status rx_model_evaluate(const rx_model* model, const rx_config* config, const char* regime, uint64_t seed,
                                   size_t episodes, char** out_json);
RX_API void rx_model_free(rx_model* model);

RX_API rx_status rx_oracle_run(const rx_config* config, size_t episodes, uint64_t seed, char** out_json);

RX_API rx_status rx_report_load(const char* experiment_dir, char** out_json);
RX_API rx_status rx_report_csv(const char* report_json, char** out_csv);
/* requirement is "dotted.path>=value" (also <=, >, <); *out_ok is 1 when met. */
RX_API rx_status rx_report_check(const char* report_json, const char* requirement, int* out_ok, char** out_description);

RX_API rx_status rx_lr_at(uint64_t step, double base_lr, uint64_t warmup_steps, double* out_lr);

#ifdef __cplusplus
}
#endif

#endif /* RULEX_RULEX_H */
