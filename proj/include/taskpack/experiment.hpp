#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "taskpack/dataset.hpp"
#include "taskpack/network.hpp"
#include "taskpack/report.hpp"

namespace taskpack {

// Everything one run needs: backbone recipe, task recipes, ordering, prune
// ratios, schedule, seeds and ablation toggles. All fields have defaults.
struct ExperimentConfig {
    // Backbone: conv(+bn+relu+pool) blocks followed by one hidden linear.
    std::vector<std::int64_t> input_shape = {1, 20, 20};
    std::vector<std::int64_t> conv_channels = {8, 16};
    std::int64_t fc_dim = 64;
    int kernel = 3;
    bool batchnorm = true;

    std::vector<TaskDatasetSpec> tasks;
    std::vector<std::size_t> ordering; // permutation of task indices; empty = identity
    std::vector<double> ratios = {0.50, 0.75, 0.75};
    TrainSchedule schedule;
    std::uint64_t seed = 42;
    std::int64_t probe_count = 256;

    bool separate_bias = false;
    bool filter_pruning = false;
    std::optional<std::vector<std::string>> trainable_layers;
};

// The three gratings tasks with disjoint orientation bands, 5 classes,
// 2000/1000 samples; the stock desk-scale setup.
ExperimentConfig default_config();

std::vector<LayerSpec> build_backbone(const ExperimentConfig& config);

// JSON bindings (all fields optional, defaults above).
ExperimentConfig config_from_json(const std::string& json_text);
TaskDatasetSpec dataset_spec_from_json(const std::string& json_text);
TrainSchedule schedule_from_json(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& config);

struct SequenceResult {
    std::vector<MetricsRow> rows;
    std::unique_ptr<PackedNetwork> net;
};

// add -> train -> prune -> retrain per ordering entry, recording the error
// trajectory; hard-fails with an invariant error if any frozen task's probe
// snapshot changes along the way.
SequenceResult run_sequence(const ExperimentConfig& config);

struct OrderingStudy {
    std::vector<MetricsRow> rows;
    std::vector<std::string> task_names;
    // mean_task_position[task][pos-1]: mean final error of that task when it
    // was added at that position, over orderings x seeds; NaN if never there.
    std::vector<std::vector<double>> mean_task_position;
    std::vector<double> mean_error_by_position;
};
OrderingStudy run_ordering_study(const ExperimentConfig& config,
                                 const std::vector<std::uint64_t>& seeds);

struct RatioStudy {
    struct Entry {
        double ratio = 0.0;
        std::uint64_t seed = 0;
        double preprune = 0.0, postprune = 0.0, postretrain = 0.0;
    };
    std::vector<MetricsRow> rows;
    std::vector<Entry> entries; // trajectory of the last task in the ordering
    std::vector<double> ratios, mean_preprune, mean_postprune, mean_postretrain;
};
RatioStudy run_ratio_study(const ExperimentConfig& config, const std::vector<double>& ratios,
                           const std::vector<std::uint64_t>& seeds);

struct LayerAblation {
    struct Entry {
        std::string set_name;
        std::uint64_t seed = 0;
        double error = 0.0;
    };
    std::vector<Entry> entries;
    std::vector<std::string> set_names;
    std::vector<double> mean_error; // aligned with set_names
};
// Trains the first ordering entry through its full lifecycle, then trains the
// second with only the given layers unfrozen (no pruning) and measures its
// error, per set and seed.
LayerAblation run_layer_ablation(const ExperimentConfig& config,
                                 const std::vector<std::vector<std::string>>& layer_sets,
                                 const std::vector<std::uint64_t>& seeds);

struct BiasAblation {
    struct Entry {
        std::string task;
        int position = 0;
        std::uint64_t seed = 0;
        double shared_error = 0.0;
        double separate_error = 0.0;
    };
    std::vector<Entry> entries;
    double mean_abs_gap = 0.0;
    std::uint64_t separate_extra_bias_bytes = 0; // per task
};
// Same seeds, separate_bias off vs on; reports paired errors, no assertion.
BiasAblation run_bias_ablation(const ExperimentConfig& config,
                               const std::vector<std::uint64_t>& seeds);

// All permutations of {0..n-1} in lexicographic order.
std::vector<std::vector<std::size_t>> all_orderings(std::size_t n);

} // namespace taskpack
