/*
 * taskpack: sequential multi-task packing for fixed-capacity networks.
 *
 * C shell over the engine: opaque handles, integer status codes, JSON
 * strings for structured payloads. Every function returning tp_status sets
 * a thread-local message retrievable via tp_last_error() on failure.
 * Strings returned through char** out parameters are heap-allocated and
 * released with tp_string_free().
 */
#ifndef TASKPACK_H
#define TASKPACK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TP_API __declspec(dllexport)
#else
#define TP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct tp_network tp_network;

typedef enum tp_status {
    TP_OK = 0,
    TP_ERR_DIMENSION = 1,
    TP_ERR_INPUT = 2,
    TP_ERR_STATE = 3,
    TP_ERR_LOOKUP = 4,
    TP_ERR_CAPACITY = 5,
    TP_ERR_OWNERSHIP = 6,
    TP_ERR_FORMAT = 7,
    TP_ERR_IO = 8,
    TP_ERR_USAGE = 9,
    TP_ERR_INVARIANT = 10,
    TP_ERR_UNKNOWN = 99,
} tp_status;

/* Message describing the most recent failure on this thread. */
TP_API const char* tp_last_error(void);

TP_API void tp_string_free(char* s);

/*
 * Network lifecycle. config_json may be NULL or "{}" for the stock backbone;
 * recognized fields: input_shape, conv_channels, fc_dim, kernel, batchnorm,
 * separate_bias, filter_pruning.
 */
TP_API tp_status tp_network_create(const char* config_json, uint64_t seed, tp_network** out);
TP_API void tp_network_free(tp_network* net);

TP_API tp_status tp_network_save(const tp_network* net, const char* path);
TP_API tp_status tp_network_load(const char* path, tp_network** out);

/* Dense single-task view of a frozen task, written as a checkpoint. */
TP_API tp_status tp_network_export_task(const tp_network* net, int32_t task, const char* path);

TP_API tp_status tp_add_task(tp_network* net, const char* name, int64_t class_count,
                             int32_t* out_task);

/*
 * dataset_json describes a synthetic task recipe (name, kind, classes,
 * train_samples, eval_samples, input_shape, variation, noise, seed);
 * schedule_json the optimizer settings (epochs, lr, decay_factor,
 * decay_epoch, retrain_epochs, retrain_lr, batch_size, trainable_layers).
 * NULL means defaults. Training uses the recipe's train split.
 */
TP_API tp_status tp_train_task(tp_network* net, int32_t task, const char* dataset_json,
                               const char* schedule_json);
TP_API tp_status tp_prune_task(tp_network* net, int32_t task, double ratio);
TP_API tp_status tp_retrain_task(tp_network* net, int32_t task, const char* dataset_json,
                                 const char* schedule_json);

/*
 * Masked forward through the task's head. input is row-major with the given
 * shape ([N, C, H, W] or the network's input shape without the batch axis).
 * out_logits receives N * classes floats; out_len reports the count.
 */
TP_API tp_status tp_infer(const tp_network* net, int32_t task, const float* input,
                          const int64_t* shape, int32_t ndim, float* out_logits,
                          int64_t out_capacity, int64_t* out_len);

/* Logit matrix over deterministic probe inputs, as JSON. */
TP_API tp_status tp_snapshot_json(const tp_network* net, int32_t task, int64_t probe_count,
                                  uint64_t probe_seed, char** out_json);

/* Top-1 error (percent) of the task over the recipe's eval split. */
TP_API tp_status tp_evaluate(const tp_network* net, int32_t task, const char* dataset_json,
                             double* out_error);

TP_API tp_status tp_task_count(const tp_network* net, int32_t* out);

/* Tasks, lifecycle flags, parameter budget and mask overhead, as JSON. */
TP_API tp_status tp_network_info_json(const tp_network* net, char** out_json);

/* ceil(param_count * max(1, ceil(log2(state_count))) / 8) */
TP_API uint64_t tp_mask_overhead_bytes(uint64_t param_count, uint32_t state_count);

/*
 * Experiments. config_json uses the experiment schema (all fields optional).
 * seed_override >= 0 replaces the config seed. report_path NULL skips the
 * report file; format is "csv" or "json". include_timing != 0 appends the
 * volatile wall-time column (off keeps identical runs byte-identical).
 */
TP_API tp_status tp_experiment_run(const char* config_json, int64_t seed_override,
                                   const char* report_path, const char* format,
                                   int32_t include_timing, char** out_summary_json);
TP_API tp_status tp_experiment_ordering(const char* config_json, const uint64_t* seeds,
                                        int32_t seed_count, const char* report_path,
                                        const char* format, char** out_summary_json);
TP_API tp_status tp_experiment_ratios(const char* config_json, const double* ratios,
                                      int32_t ratio_count, const uint64_t* seeds,
                                      int32_t seed_count, const char* report_path,
                                      const char* format, char** out_summary_json);
TP_API tp_status tp_experiment_layers(const char* config_json, const char* layer_sets_json,
                                      const uint64_t* seeds, int32_t seed_count,
                                      char** out_summary_json);
TP_API tp_status tp_experiment_bias(const char* config_json, const uint64_t* seeds,
                                    int32_t seed_count, char** out_summary_json);

#ifdef __cplusplus
}
#endif

#endif /* TASKPACK_H */
