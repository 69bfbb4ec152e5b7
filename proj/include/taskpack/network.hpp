#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taskpack/layers.hpp"
#include "taskpack/ops.hpp"
#include "taskpack/ownership.hpp"
#include "taskpack/tensor.hpp"

namespace taskpack {

enum class TaskState : std::uint8_t { training = 0, pruned_retraining = 1, frozen = 2 };

struct TaskRecord {
    TaskId id = 0;
    std::string name;
    std::int64_t class_count = 0;
    TaskState state = TaskState::training;
    float ratio_used = 0.0f;
    TensorPtr head_weight;
    TensorPtr head_bias;
    // Separate-bias mode: one private vector per biased backbone layer,
    // aligned with PackedNetwork::bias_slots().
    std::vector<TensorPtr> private_biases;
};

struct TrainSchedule {
    int epochs = 4;
    float lr = 0.1f;
    float decay_factor = 0.1f;
    int decay_epoch = 2;
    int retrain_epochs = 2;
    float retrain_lr = 0.01f;
    int batch_size = 32;
    // Layer-subset ablation: restrict new-task weight updates to the named
    // prunable layers. Unset means all layers; an empty set trains only the
    // task head.
    std::optional<std::vector<std::string>> trainable_layers;
};

struct Batch {
    TensorPtr input;
    std::vector<std::int64_t> labels;
};

struct Dataset {
    TensorPtr inputs; // [N, ...input shape]
    std::vector<std::int64_t> labels;
    std::int64_t size() const { return inputs ? inputs->dim(0) : 0; }
};

// One backbone layer instance with its parameter tensors.
struct ParamLayer {
    LayerSpec spec;
    std::string name;
    TensorPtr weight;                       // conv kernel / linear weight
    TensorPtr bias;                         // shared bias
    TensorPtr gain, bn_bias, running_mean, running_var;
    int prunable_index = -1;                // position among prunable layers
    int bias_slot = -1;                     // position among biased layers
};

// The packing controller: a fixed backbone whose prunable weights are shared
// across tasks under an ownership map, plus one private output head per task.
// Lifecycle per task: add -> train -> prune -> retrain -> frozen. Committed
// weights are never modified again, which makes prior-task inference bitwise
// stable for the lifetime of the network.
class PackedNetwork {
public:
    struct Options {
        bool separate_bias = false;
        bool filter_pruning = false;
    };

    PackedNetwork(std::vector<LayerSpec> backbone, std::vector<std::int64_t> input_shape,
                  std::uint64_t seed, Options options);
    PackedNetwork(std::vector<LayerSpec> backbone, std::vector<std::int64_t> input_shape,
                  std::uint64_t seed)
        : PackedNetwork(std::move(backbone), std::move(input_shape), seed, Options()) {}

    // ---- lifecycle ----
    TaskId add_task(const std::string& name, std::int64_t class_count);
    void train_task(TaskId t, const Dataset& data, const TrainSchedule& schedule);
    void prune_task(TaskId t, double ratio);
    // Filter-pruning variant: scores filters on the given batch, then prunes
    // floor(ratio * free filters) whole filters instead of single weights.
    void prune_task_filters(TaskId t, double ratio, const Batch& scoring_batch);
    void retrain_task(TaskId t, const Dataset& data, const TrainSchedule& schedule);

    // Masked forward through task t's head. A frozen task replays its exact
    // post-retrain state; the open task runs on current weights.
    TensorPtr infer(TaskId t, const TensorPtr& x) const;
    // Forward with no ownership masking (current weights as stored).
    TensorPtr infer_unmasked(TaskId t, const TensorPtr& x) const;
    // Deterministic logit matrix over a probe set, for regression comparison.
    std::vector<float> snapshot(TaskId t, const TensorPtr& probes) const;

    // ---- structure access ----
    const std::vector<ParamLayer>& layers() const { return layers_; }
    std::vector<ParamLayer>& layers() { return layers_; }
    const std::vector<std::size_t>& prunable_layers() const { return prunable_; }
    const OwnershipMap& ownership() const { return map_; }
    OwnershipMap& ownership() { return map_; }
    const std::vector<TaskRecord>& tasks() const { return tasks_; }
    std::vector<TaskRecord>& tasks() { return tasks_; }
    const TaskRecord& task(TaskId t) const;
    TaskRecord& task(TaskId t);

    bool biases_frozen() const { return biases_frozen_; }
    bool batchnorm_frozen() const { return bn_frozen_; }
    bool separate_bias() const { return options_.separate_bias; }
    bool filter_pruning() const { return options_.filter_pruning; }
    std::uint64_t seed() const { return seed_; }
    const std::vector<LayerSpec>& backbone() const { return backbone_; }
    const std::vector<std::int64_t>& input_shape() const { return input_shape_; }
    std::int64_t feature_dim() const { return feature_dim_; }

    // Indices into layers() of every layer holding a shared bias vector.
    const std::vector<std::size_t>& bias_slots() const { return bias_slots_; }

    // Filter-level ownership per prunable layer (parallel to weight owners;
    // meaningful in filter-pruning mode).
    const std::vector<std::vector<std::uint8_t>>& filter_owners() const { return filter_owner_; }
    std::vector<std::vector<std::uint8_t>>& filter_owners() { return filter_owner_; }

    // Where each prunable layer's inputs come from: prev < 0 reads the raw
    // network input, otherwise input index i maps to filter i / group of
    // prunable layer prev.
    struct ChannelSource {
        int prev = -1;
        std::int64_t group = 1;
    };
    const std::vector<ChannelSource>& channel_sources() const { return channel_src_; }

    // ---- plumbing shared with the pruner and tests ----
    TensorPtr forward(Tape* tape, const TensorPtr& x, BatchNormMode bn_mode, TaskId head_task,
                      const std::vector<TensorPtr>* weight_override = nullptr,
                      std::vector<TensorPtr>* record_outputs = nullptr) const;

    // Seed of the shuffle stream used by one (task, phase) training run.
    std::uint64_t shuffle_seed(TaskId t, bool retraining) const;

    // Recorded activations from the last score_batch call.
    struct ScoreRecord {
        std::vector<TensorPtr> outputs; // one per prunable layer
        bool valid = false;
    };
    const ScoreRecord& score_record() const { return score_record_; }
    ScoreRecord& score_record() { return score_record_; }

    // Restores lifecycle flags when loading from a checkpoint.
    void set_frozen_flags(bool biases, bool batchnorm) {
        biases_frozen_ = biases;
        bn_frozen_ = batchnorm;
    }

private:
    void run_epochs(TaskId t, const Dataset& data, const TrainSchedule& schedule, int epochs,
                    float lr_base, float decay_factor, int decay_epoch, bool retraining);
    LayerMasks weight_update_masks(TaskId t, bool retraining,
                                   const std::optional<std::vector<std::string>>& subset) const;
    std::vector<std::uint8_t> head_update_mask(TaskId t, bool retraining) const;
    TensorPtr head_bias_for(const TaskRecord& rec) const;

    std::vector<LayerSpec> backbone_;
    std::vector<std::int64_t> input_shape_;
    std::uint64_t seed_ = 0;
    Options options_;

    std::vector<ParamLayer> layers_;
    std::vector<std::size_t> prunable_;
    std::vector<std::size_t> bias_slots_;
    std::vector<ChannelSource> channel_src_;
    OwnershipMap map_;
    std::vector<std::vector<std::uint8_t>> filter_owner_;
    std::vector<TaskRecord> tasks_;
    std::int64_t feature_dim_ = 0;
    bool biases_frozen_ = false;
    bool bn_frozen_ = false;
    ScoreRecord score_record_;
};

// Top-1 error percentage of task t over a labeled split, masked inference.
double evaluate_error(const PackedNetwork& net, TaskId t, const Dataset& data);

// Deterministic probe inputs in [-1, 1).
TensorPtr make_probes(const std::vector<std::int64_t>& input_shape, std::int64_t count,
                      std::uint64_t seed);

} // namespace taskpack
