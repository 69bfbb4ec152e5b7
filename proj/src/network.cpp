#include "taskpack/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "taskpack/pruning.hpp"
#include "taskpack/rng.hpp"

namespace taskpack {

namespace {
constexpr float kBnMomentum = 0.1f;
constexpr float kBnEpsilon = 1e-5f;

// Seed-stream labels.
constexpr std::uint64_t kInitStreamBase = 1000;
constexpr std::uint64_t kHeadStreamBase = 2000;
constexpr std::uint64_t kShuffleStreamBase = 3000;
constexpr std::uint64_t kProbeStream = 0x70726F6265; // "probe"
} // namespace

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

std::vector<std::int64_t> infer_output_shape(const std::vector<LayerSpec>& layers,
                                             const std::vector<std::int64_t>& input_shape) {
    std::vector<std::int64_t> shape = input_shape;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::linear:
                require(shape.size() == 1, ErrorCode::dimension,
                        "linear layer expects flat input, got " + shape_str(shape));
                require(shape[0] == l.in, ErrorCode::dimension,
                        "linear layer expects " + std::to_string(l.in) + " features, got " +
                            shape_str(shape));
                shape = {l.out};
                break;
            case LayerKind::conv2d: {
                require(shape.size() == 3, ErrorCode::dimension,
                        "conv2d layer expects [C,H,W] input, got " + shape_str(shape));
                require(shape[0] == l.in, ErrorCode::dimension,
                        "conv2d layer expects " + std::to_string(l.in) + " channels, got " +
                            shape_str(shape));
                const std::int64_t hn = shape[1] + 2 * l.pad - l.kernel;
                const std::int64_t wn = shape[2] + 2 * l.pad - l.kernel;
                require(hn >= 0 && wn >= 0 && hn % l.stride == 0 && wn % l.stride == 0,
                        ErrorCode::dimension,
                        "conv2d output size is not a positive integer for input " +
                            shape_str(shape));
                shape = {l.out, hn / l.stride + 1, wn / l.stride + 1};
                break;
            }
            case LayerKind::batchnorm:
                require(l.in > 0, ErrorCode::dimension, "batchnorm: zero channel count");
                require(!shape.empty() && shape[0] == l.in, ErrorCode::dimension,
                        "batchnorm expects " + std::to_string(l.in) + " channels, got " +
                            shape_str(shape));
                break;
            case LayerKind::relu:
                break;
            case LayerKind::maxpool2x2:
                require(shape.size() == 3, ErrorCode::dimension,
                        "maxpool2x2 expects [C,H,W] input, got " + shape_str(shape));
                require(shape[1] % 2 == 0 && shape[2] % 2 == 0, ErrorCode::dimension,
                        "maxpool2x2: spatial dims must be even, got " + shape_str(shape));
                shape = {shape[0], shape[1] / 2, shape[2] / 2};
                break;
            case LayerKind::flatten: {
                std::int64_t n = 1;
                for (auto d : shape) n *= d;
                shape = {n};
                break;
            }
        }
    }
    return shape;
}

PackedNetwork::PackedNetwork(std::vector<LayerSpec> backbone,
                             std::vector<std::int64_t> input_shape, std::uint64_t seed,
                             Options options)
    : backbone_(std::move(backbone)),
      input_shape_(std::move(input_shape)),
      seed_(seed),
      options_(options) {
    auto out_shape = infer_output_shape(backbone_, input_shape_);
    require(out_shape.size() == 1, ErrorCode::dimension,
            "backbone must end with a flat feature vector, got " + shape_str(out_shape) +
                "; add a flatten layer");
    feature_dim_ = out_shape[0];

    std::vector<std::size_t> map_sizes;
    int conv_n = 0, fc_n = 0, bn_n = 0;
    int last_prunable = -1;
    std::int64_t last_prunable_out = 0;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
        const LayerSpec& spec = backbone_[i];
        ParamLayer layer;
        layer.spec = spec;
        Rng init(mix_seed(seed_, kInitStreamBase + i));
        switch (spec.kind) {
            case LayerKind::linear:
            case LayerKind::conv2d: {
                const bool conv = spec.kind == LayerKind::conv2d;
                layer.name =
                    conv ? "conv" + std::to_string(++conv_n) : "fc" + std::to_string(++fc_n);
                const std::int64_t fan_in = conv ? spec.in * spec.kernel * spec.kernel : spec.in;
                const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
                auto shape = conv ? std::vector<std::int64_t>{spec.out, spec.in, spec.kernel,
                                                              spec.kernel}
                                  : std::vector<std::int64_t>{spec.out, spec.in};
                layer.weight = make_tensor(shape);
                for (auto& v : layer.weight->data) v = init.uniform_f(-bound, bound);
                if (spec.has_bias) {
                    layer.bias = make_tensor({spec.out});
                    layer.bias_slot = static_cast<int>(bias_slots_.size());
                    bias_slots_.push_back(i);
                }
                layer.prunable_index = static_cast<int>(prunable_.size());
                prunable_.push_back(i);
                map_sizes.push_back(static_cast<std::size_t>(spec.weight_count()));

                ChannelSource src;
                src.prev = last_prunable;
                if (last_prunable >= 0) {
                    require(spec.in % last_prunable_out == 0, ErrorCode::dimension,
                            "layer " + layer.name + " input " + std::to_string(spec.in) +
                                " is not a multiple of upstream filter count " +
                                std::to_string(last_prunable_out));
                    src.group = spec.in / last_prunable_out;
                }
                channel_src_.push_back(src);
                last_prunable = layer.prunable_index;
                last_prunable_out = spec.out;
                break;
            }
            case LayerKind::batchnorm:
                layer.name = "bn" + std::to_string(++bn_n);
                layer.gain = make_tensor(
                    {spec.in}, std::vector<float>(static_cast<std::size_t>(spec.in), 1.0f));
                layer.bn_bias = make_tensor({spec.in});
                layer.running_mean = make_tensor({spec.in});
                layer.running_var = make_tensor(
                    {spec.in}, std::vector<float>(static_cast<std::size_t>(spec.in), 1.0f));
                break;
            default:
                layer.name = layer_kind_name(spec.kind);
                break;
        }
        layers_.push_back(std::move(layer));
    }
    map_ = OwnershipMap(std::move(map_sizes));
    filter_owner_.resize(prunable_.size());
    for (std::size_t p = 0; p < prunable_.size(); ++p)
        filter_owner_[p].assign(static_cast<std::size_t>(layers_[prunable_[p]].spec.out),
                                kFreeOwner);
}

const TaskRecord& PackedNetwork::task(TaskId t) const {
    require(t >= 1 && static_cast<std::size_t>(t) <= tasks_.size(), ErrorCode::lookup,
            "unknown task " + std::to_string(t));
    return tasks_[static_cast<std::size_t>(t - 1)];
}

TaskRecord& PackedNetwork::task(TaskId t) {
    require(t >= 1 && static_cast<std::size_t>(t) <= tasks_.size(), ErrorCode::lookup,
            "unknown task " + std::to_string(t));
    return tasks_[static_cast<std::size_t>(t - 1)];
}

TaskId PackedNetwork::add_task(const std::string& name, std::int64_t class_count) {
    require(class_count >= 1, ErrorCode::input, "add_task: class count must be >= 1");
    require(tasks_.empty() || tasks_.back().state == TaskState::frozen, ErrorCode::state,
            "add_task: task " + std::to_string(tasks_.empty() ? 0 : tasks_.back().id) +
                " is still open");
    require(map_.total_entries() == 0 || map_.free_count() > 0, ErrorCode::capacity,
            "add_task: no free parameters available for a new task");

    const TaskId id = map_.register_task();
    TaskRecord rec;
    rec.id = id;
    rec.name = name;
    rec.class_count = class_count;
    rec.state = TaskState::training;

    Rng head_rng(mix_seed(seed_, kHeadStreamBase + static_cast<std::uint64_t>(id)));
    const float bound = 1.0f / std::sqrt(static_cast<float>(feature_dim_));
    rec.head_weight = make_tensor({class_count, feature_dim_});
    for (auto& v : rec.head_weight->data) v = head_rng.uniform_f(-bound, bound);
    rec.head_bias = make_tensor({class_count});
    for (auto& v : rec.head_bias->data) v = head_rng.uniform_f(-bound, bound);

    if (options_.separate_bias) {
        // Each task trains its own copy, starting from the previous task's
        // frozen values (the initial biases for task 1).
        for (auto slot : bias_slots_) {
            const TensorPtr& src =
                tasks_.empty() ? layers_[slot].bias
                               : tasks_.back().private_biases[static_cast<std::size_t>(
                                     layers_[slot].bias_slot)];
            rec.private_biases.push_back(make_tensor(src->shape, src->data));
        }
    }

    tasks_.push_back(std::move(rec));
    return id;
}

TensorPtr PackedNetwork::head_bias_for(const TaskRecord& rec) const { return rec.head_bias; }

TensorPtr PackedNetwork::forward(Tape* tape, const TensorPtr& x, BatchNormMode bn_mode,
                                 TaskId head_task, const std::vector<TensorPtr>* weight_override,
                                 std::vector<TensorPtr>* record_outputs) const {
    const TaskRecord& rec = task(head_task);
    const BatchNormMode mode = bn_frozen_ ? BatchNormMode::eval : bn_mode;
    TensorPtr cur = x;
    for (const auto& layer : layers_) {
        switch (layer.spec.kind) {
            case LayerKind::linear:
            case LayerKind::conv2d: {
                TensorPtr w = layer.weight;
                if (weight_override)
                    w = (*weight_override)[static_cast<std::size_t>(layer.prunable_index)];
                TensorPtr b = layer.bias;
                if (options_.separate_bias && layer.bias_slot >= 0)
                    b = rec.private_biases[static_cast<std::size_t>(layer.bias_slot)];
                cur = layer.spec.kind == LayerKind::linear
                          ? linear_forward(tape, cur, w, b)
                          : conv2d_forward(tape, cur, w, b, layer.spec.stride, layer.spec.pad);
                if (record_outputs) record_outputs->push_back(cur);
                break;
            }
            case LayerKind::batchnorm:
                cur = batchnorm_forward(tape, cur, layer.gain, layer.bn_bias, layer.running_mean,
                                        layer.running_var, mode, kBnMomentum, kBnEpsilon);
                break;
            case LayerKind::relu:
                cur = relu(tape, cur);
                break;
            case LayerKind::maxpool2x2:
                cur = maxpool2x2(tape, cur);
                break;
            case LayerKind::flatten:
                cur = flatten(tape, cur);
                break;
        }
    }
    if (cur->shape.size() != 2) cur = flatten(tape, cur);
    return linear_forward(tape, cur, rec.head_weight, head_bias_for(rec));
}

std::uint64_t PackedNetwork::shuffle_seed(TaskId t, bool retraining) const {
    return mix_seed(seed_, kShuffleStreamBase + static_cast<std::uint64_t>(t) * 8 +
                               (retraining ? 1 : 0));
}

LayerMasks PackedNetwork::weight_update_masks(
    TaskId t, bool retraining, const std::optional<std::vector<std::string>>& subset) const {
    LayerMasks masks =
        update_mask(map_, t, retraining ? UpdatePhase::retraining : UpdatePhase::training);

    if (options_.filter_pruning && retraining) {
        // Survivor weights reading channels that stayed free are pinned at
        // zero so channels reused by later tasks cannot feed committed
        // filters.
        for (std::size_t p = 0; p < prunable_.size(); ++p) {
            const ChannelSource src = channel_src_[p];
            if (src.prev < 0) continue;
            const auto& owners_prev = filter_owner_[static_cast<std::size_t>(src.prev)];
            const LayerSpec& spec = layers_[prunable_[p]].spec;
            const std::int64_t in = spec.in;
            const std::int64_t per_out = spec.weight_count() / spec.out;
            const std::int64_t per_in = per_out / in; // kernel*kernel for conv, 1 for linear
            auto& m = masks[p];
            for (std::int64_t f = 0; f < spec.out; ++f)
                for (std::int64_t c = 0; c < in; ++c) {
                    if (owners_prev[static_cast<std::size_t>(c / src.group)] != kFreeOwner)
                        continue;
                    for (std::int64_t j = 0; j < per_in; ++j)
                        m[static_cast<std::size_t>(f * per_out + c * per_in + j)] = 0;
                }
        }
    }

    if (subset) {
        std::set<std::string> names(subset->begin(), subset->end());
        for (const auto& n : names) {
            bool known = false;
            for (auto i : prunable_)
                if (layers_[i].name == n) known = true;
            require(known, ErrorCode::lookup, "trainable_layers: unknown layer '" + n + "'");
        }
        for (std::size_t p = 0; p < prunable_.size(); ++p)
            if (!names.count(layers_[prunable_[p]].name))
                std::fill(masks[p].begin(), masks[p].end(), 0);
    }
    return masks;
}

std::vector<std::uint8_t> PackedNetwork::head_update_mask(TaskId t, bool retraining) const {
    const TaskRecord& rec = task(t);
    std::vector<std::uint8_t> mask(rec.head_weight->data.size(), 1);
    if (options_.filter_pruning && retraining && !prunable_.empty()) {
        const auto& owners_last = filter_owner_.back();
        const std::int64_t group = feature_dim_ / static_cast<std::int64_t>(owners_last.size());
        for (std::int64_t o = 0; o < rec.class_count; ++o)
            for (std::int64_t u = 0; u < feature_dim_; ++u)
                if (owners_last[static_cast<std::size_t>(u / group)] == kFreeOwner)
                    mask[static_cast<std::size_t>(o * feature_dim_ + u)] = 0;
    }
    return mask;
}

void PackedNetwork::run_epochs(TaskId t, const Dataset& data, const TrainSchedule& schedule,
                               int epochs, float lr_base, float decay_factor, int decay_epoch,
                               bool retraining) {
    if (epochs == 0) return;
    TaskRecord& rec = task(t);
    const std::int64_t n = data.size();
    const std::int64_t batch_size = schedule.batch_size;
    const auto masks = weight_update_masks(t, retraining, schedule.trainable_layers);
    const auto head_mask = head_update_mask(t, retraining);

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(shuffle_seed(t, retraining));

    const std::int64_t sample_len = data.inputs->numel() / n;
    std::vector<std::int64_t> batch_shape = data.inputs->shape;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const float lr = epoch >= decay_epoch ? lr_base * decay_factor : lr_base;
        rng.shuffle(order);
        for (std::int64_t start = 0; start < n; start += batch_size) {
            const std::int64_t bsz = std::min<std::int64_t>(batch_size, n - start);
            batch_shape[0] = bsz;
            auto bx = make_tensor(batch_shape);
            std::vector<std::int64_t> by(static_cast<std::size_t>(bsz));
            for (std::int64_t i = 0; i < bsz; ++i) {
                const std::int64_t src = order[static_cast<std::size_t>(start + i)];
                std::copy_n(data.inputs->data.begin() + src * sample_len, sample_len,
                            bx->data.begin() + i * sample_len);
                by[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
            }

            Tape tape;
            auto logits = forward(&tape, bx, BatchNormMode::train, t);
            auto loss = softmax_xent(&tape, logits, by);
            tape.backward(loss);

            for (std::size_t p = 0; p < prunable_.size(); ++p) {
                auto& w = *layers_[prunable_[p]].weight;
                sgd_masked_step(w, w.grad, lr, masks[p]);
            }
            for (auto slot : bias_slots_) {
                auto& layer = layers_[slot];
                if (options_.separate_bias) {
                    auto& b = *rec.private_biases[static_cast<std::size_t>(layer.bias_slot)];
                    sgd_step(b, b.grad, lr);
                } else if (!biases_frozen_) {
                    sgd_step(*layer.bias, layer.bias->grad, lr);
                }
            }
            if (!bn_frozen_) {
                for (auto& layer : layers_) {
                    if (layer.spec.kind != LayerKind::batchnorm) continue;
                    sgd_step(*layer.gain, layer.gain->grad, lr);
                    sgd_step(*layer.bn_bias, layer.bn_bias->grad, lr);
                }
            }
            sgd_masked_step(*rec.head_weight, rec.head_weight->grad, lr, head_mask);
            sgd_step(*rec.head_bias, rec.head_bias->grad, lr);
        }
    }
}

void PackedNetwork::train_task(TaskId t, const Dataset& data, const TrainSchedule& schedule) {
    TaskRecord& rec = task(t);
    require(rec.state == TaskState::training, ErrorCode::state,
            "train_task: task " + std::to_string(t) + " is not in training state");
    require(data.size() > 0, ErrorCode::input, "train_task: empty dataset");
    require(schedule.batch_size >= 1, ErrorCode::input, "train_task: batch size must be >= 1");
    require(schedule.epochs >= 0 && schedule.retrain_epochs >= 0 &&
                schedule.retrain_epochs <= schedule.epochs,
            ErrorCode::input, "train_task: retrain_epochs must be in [0, epochs]");
    run_epochs(t, data, schedule, schedule.epochs, schedule.lr, schedule.decay_factor,
               schedule.decay_epoch, false);
    score_record_.valid = false;
}

void PackedNetwork::prune_task(TaskId t, double ratio) {
    TaskRecord& rec = task(t);
    require(ratio >= 0.0 && ratio <= 1.0, ErrorCode::input,
            "prune_task: ratio must be in [0,1], got " + std::to_string(ratio));
    require(rec.state == TaskState::training, ErrorCode::state,
            "prune_task: task " + std::to_string(t) + " is not in training state");
    require(!options_.filter_pruning, ErrorCode::usage,
            "prune_task: network is in filter-pruning mode, use prune_task_filters");

    for (std::size_t p = 0; p < prunable_.size(); ++p) {
        auto& layer = layers_[prunable_[p]];
        const auto& owners = map_.layer(p);
        BitMask eligible(owners.size());
        for (std::size_t i = 0; i < owners.size(); ++i)
            eligible[i] = owners[i] == kFreeOwner ? 1 : 0;
        auto decision = magnitude_select(*layer.weight, eligible, ratio);
        apply_prune(*layer.weight, decision);

        // Survivors: eligible indices that were not pruned.
        std::vector<std::int64_t> survivors;
        survivors.reserve(static_cast<std::size_t>(decision.retained_count));
        std::size_t next = 0;
        for (std::size_t i = 0; i < owners.size(); ++i) {
            if (!eligible[i]) continue;
            if (next < decision.pruned.size() &&
                decision.pruned[next] == static_cast<std::int64_t>(i)) {
                ++next;
                continue;
            }
            survivors.push_back(static_cast<std::int64_t>(i));
        }
        map_.commit_survivors(t, p, survivors);
    }
    rec.ratio_used = static_cast<float>(ratio);
    rec.state = TaskState::pruned_retraining;
    score_record_.valid = false;
}

void PackedNetwork::prune_task_filters(TaskId t, double ratio, const Batch& scoring_batch) {
    TaskRecord& rec = task(t);
    require(options_.filter_pruning, ErrorCode::usage,
            "prune_task_filters: network is not in filter-pruning mode");
    require(ratio >= 0.0 && ratio <= 1.0, ErrorCode::input,
            "prune_task_filters: ratio must be in [0,1]");
    require(rec.state == TaskState::training, ErrorCode::state,
            "prune_task_filters: task " + std::to_string(t) + " is not in training state");

    score_batch(*this, t, scoring_batch);
    std::int64_t free_filters = 0;
    for (const auto& owners : filter_owner_)
        for (auto o : owners)
            if (o == kFreeOwner) ++free_filters;
    const auto n =
        static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(free_filters)));
    const auto pruned = filter_prune_step(*this, n);
    std::set<std::pair<std::size_t, std::int64_t>> pruned_set(pruned.begin(), pruned.end());

    // Everything free and unpruned survives: commit filters and their weights
    // to task t. Incoming weights from pruned channels were zeroed by the
    // step, and the retraining mask keeps them pinned.
    for (std::size_t p = 0; p < prunable_.size(); ++p) {
        auto& layer = layers_[prunable_[p]];
        auto& owners = filter_owner_[p];
        const std::int64_t per_out = layer.spec.weight_count() / layer.spec.out;
        std::vector<std::int64_t> commit;
        for (std::int64_t f = 0; f < layer.spec.out; ++f) {
            if (owners[static_cast<std::size_t>(f)] != kFreeOwner) continue;
            if (pruned_set.count({p, f})) continue;
            owners[static_cast<std::size_t>(f)] = static_cast<std::uint8_t>(t);
            for (std::int64_t j = 0; j < per_out; ++j) commit.push_back(f * per_out + j);
        }
        map_.commit_survivors(t, p, commit);
    }

    // The open task's head must not read channels that remain free.
    if (!prunable_.empty()) {
        const auto& owners_last = filter_owner_.back();
        const std::int64_t group = feature_dim_ / static_cast<std::int64_t>(owners_last.size());
        for (std::int64_t o = 0; o < rec.class_count; ++o)
            for (std::int64_t u = 0; u < feature_dim_; ++u)
                if (owners_last[static_cast<std::size_t>(u / group)] == kFreeOwner)
                    rec.head_weight->data[static_cast<std::size_t>(o * feature_dim_ + u)] = 0.0f;
    }

    rec.ratio_used = static_cast<float>(ratio);
    rec.state = TaskState::pruned_retraining;
    score_record_.valid = false;
}

void PackedNetwork::retrain_task(TaskId t, const Dataset& data, const TrainSchedule& schedule) {
    TaskRecord& rec = task(t);
    require(rec.state == TaskState::pruned_retraining, ErrorCode::state,
            "retrain_task: task " + std::to_string(t) + " has not been pruned");
    require(data.size() > 0, ErrorCode::input, "retrain_task: empty dataset");
    // Constant learning rate: decay epoch beyond the horizon.
    run_epochs(t, data, schedule, schedule.retrain_epochs, schedule.retrain_lr, 1.0f,
               schedule.retrain_epochs + 1, true);
    rec.state = TaskState::frozen;
    if (t == 1) {
        biases_frozen_ = true;
        bn_frozen_ = true;
    }
    score_record_.valid = false;
}

TensorPtr PackedNetwork::infer(TaskId t, const TensorPtr& x) const {
    const TaskRecord& rec = task(t);
    if (rec.state != TaskState::frozen) return forward(nullptr, x, BatchNormMode::eval, t);

    const auto masks = inference_mask(map_, t);
    std::vector<TensorPtr> masked;
    masked.reserve(prunable_.size());
    for (std::size_t p = 0; p < prunable_.size(); ++p) {
        const auto& w = layers_[prunable_[p]].weight;
        auto mw = make_tensor(w->shape);
        for (std::size_t i = 0; i < w->data.size(); ++i)
            mw->data[i] = masks[p][i] ? w->data[i] : 0.0f;
        masked.push_back(std::move(mw));
    }
    return forward(nullptr, x, BatchNormMode::eval, t, &masked);
}

TensorPtr PackedNetwork::infer_unmasked(TaskId t, const TensorPtr& x) const {
    return forward(nullptr, x, BatchNormMode::eval, t);
}

std::vector<float> PackedNetwork::snapshot(TaskId t, const TensorPtr& probes) const {
    return infer(t, probes)->data;
}

double evaluate_error(const PackedNetwork& net, TaskId t, const Dataset& data) {
    require(data.size() > 0, ErrorCode::input, "evaluate_error: empty dataset");
    const std::int64_t n = data.size();
    const std::int64_t chunk = 256;
    const std::int64_t sample_len = data.inputs->numel() / n;
    std::int64_t wrong = 0;
    std::vector<std::int64_t> shape = data.inputs->shape;
    for (std::int64_t start = 0; start < n; start += chunk) {
        const std::int64_t bsz = std::min(chunk, n - start);
        shape[0] = bsz;
        auto bx = make_tensor(shape);
        std::copy_n(data.inputs->data.begin() + start * sample_len, bsz * sample_len,
                    bx->data.begin());
        auto logits = net.infer(t, bx);
        const std::int64_t classes = logits->dim(1);
        for (std::int64_t i = 0; i < bsz; ++i) {
            const float* row = logits->data.data() + i * classes;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best != data.labels[static_cast<std::size_t>(start + i)]) ++wrong;
        }
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

TensorPtr make_probes(const std::vector<std::int64_t>& input_shape, std::int64_t count,
                      std::uint64_t seed) {
    std::vector<std::int64_t> shape = {count};
    shape.insert(shape.end(), input_shape.begin(), input_shape.end());
    auto probes = make_tensor(shape);
    Rng rng(mix_seed(seed, kProbeStream));
    for (auto& v : probes->data) v = rng.uniform_f(-1.0f, 1.0f);
    return probes;
}

} // namespace taskpack
