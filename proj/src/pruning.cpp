#include "taskpack/pruning.hpp"

#include <algorithm>
#include <cmath>

#include "taskpack/network.hpp"

namespace taskpack {

PruneDecision magnitude_select(const Tensor& values, const BitMask& eligible, double ratio) {
    require(ratio >= 0.0 && ratio <= 1.0, ErrorCode::input,
            "magnitude_select: ratio must be in [0,1], got " + std::to_string(ratio));
    require(eligible.size() == values.data.size(), ErrorCode::dimension,
            "magnitude_select: eligibility mask length " + std::to_string(eligible.size()) +
                " does not match value count " + std::to_string(values.data.size()));

    std::vector<std::int64_t> candidates;
    for (std::size_t i = 0; i < eligible.size(); ++i)
        if (eligible[i]) candidates.push_back(static_cast<std::int64_t>(i));

    PruneDecision d;
    d.eligible_count = static_cast<std::int64_t>(candidates.size());
    d.pruned_count = static_cast<std::int64_t>(
        std::floor(ratio * static_cast<double>(d.eligible_count)));
    d.retained_count = d.eligible_count - d.pruned_count;

    // Smallest magnitude first; ties go to the smaller flat index.
    std::sort(candidates.begin(), candidates.end(), [&](std::int64_t a, std::int64_t b) {
        const float fa = std::fabs(values.data[static_cast<std::size_t>(a)]);
        const float fb = std::fabs(values.data[static_cast<std::size_t>(b)]);
        if (fa != fb) return fa < fb;
        return a < b;
    });
    d.pruned.assign(candidates.begin(), candidates.begin() + d.pruned_count);
    std::sort(d.pruned.begin(), d.pruned.end());
    return d;
}

void apply_prune(Tensor& values, const PruneDecision& decision) {
    for (auto i : decision.pruned) {
        require(i >= 0 && static_cast<std::size_t>(i) < values.data.size(), ErrorCode::input,
                "apply_prune: index " + std::to_string(i) + " out of range");
        values.data[static_cast<std::size_t>(i)] = 0.0f;
    }
}

BudgetLedger budget_report(const OwnershipMap& map) {
    BudgetLedger ledger;
    ledger.owned.assign(static_cast<std::size_t>(map.task_count()), 0);
    for (std::size_t l = 0; l < map.layer_count(); ++l) {
        for (auto o : map.layer(l)) {
            ++ledger.total;
            if (o == kFreeOwner)
                ++ledger.free_entries;
            else
                ++ledger.owned[static_cast<std::size_t>(o - 1)];
        }
    }
    return ledger;
}

BudgetLedger simulate_budget(std::uint64_t total, const std::vector<double>& ratios) {
    BudgetLedger ledger;
    ledger.total = total;
    ledger.free_entries = total;
    for (double r : ratios) {
        require(r >= 0.0 && r <= 1.0, ErrorCode::input,
                "simulate_budget: ratio must be in [0,1], got " + std::to_string(r));
        const auto pruned = static_cast<std::uint64_t>(
            std::floor(r * static_cast<double>(ledger.free_entries)));
        ledger.owned.push_back(ledger.free_entries - pruned);
        ledger.free_entries = pruned;
    }
    return ledger;
}

void score_batch(PackedNetwork& net, TaskId t, const Batch& batch) {
    require(batch.input && batch.input->dim(0) > 0, ErrorCode::input,
            "score_batch: empty batch");
    const TaskRecord& rec = net.task(t);
    require(rec.state == TaskState::training, ErrorCode::state,
            "score_batch: task " + std::to_string(t) + " is not in training state");

    Tape tape;
    std::vector<TensorPtr> outputs;
    auto logits = net.forward(&tape, batch.input, BatchNormMode::train, t, nullptr, &outputs);
    auto loss = softmax_xent(&tape, logits, batch.labels);
    tape.backward(loss);
    net.score_record().outputs = std::move(outputs);
    net.score_record().valid = true;
}

std::vector<std::vector<float>> taylor_filter_scores(const PackedNetwork& net) {
    require(net.score_record().valid, ErrorCode::state,
            "taylor_filter_scores: no recorded forward/backward pass; run score_batch first");
    const auto& outputs = net.score_record().outputs;
    std::vector<std::vector<float>> scores;
    scores.reserve(outputs.size());
    for (const auto& out : outputs) {
        require(out->grad.size() == out->data.size(), ErrorCode::state,
                "taylor_filter_scores: recorded activations carry no gradients");
        const std::int64_t batch = out->dim(0);
        const std::int64_t filters = out->dim(1);
        const std::int64_t spatial = out->numel() / (batch * filters);
        std::vector<double> raw(static_cast<std::size_t>(filters), 0.0);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t f = 0; f < filters; ++f) {
                const std::size_t base = static_cast<std::size_t>((b * filters + f) * spatial);
                double acc = 0.0;
                for (std::int64_t s = 0; s < spatial; ++s)
                    acc += static_cast<double>(out->data[base + static_cast<std::size_t>(s)]) *
                           static_cast<double>(out->grad[base + static_cast<std::size_t>(s)]);
                raw[static_cast<std::size_t>(f)] += acc;
            }
        double norm_sq = 0.0;
        for (auto& v : raw) {
            v = std::fabs(v / static_cast<double>(batch * spatial));
            norm_sq += v * v;
        }
        const double norm = std::sqrt(norm_sq);
        std::vector<float> layer_scores(static_cast<std::size_t>(filters), 0.0f);
        for (std::int64_t f = 0; f < filters; ++f)
            layer_scores[static_cast<std::size_t>(f)] =
                norm > 0.0 ? static_cast<float>(raw[static_cast<std::size_t>(f)] / norm) : 0.0f;
        scores.push_back(std::move(layer_scores));
    }
    return scores;
}

void apply_filter_prune(PackedNetwork& net,
                        const std::vector<std::pair<std::size_t, std::int64_t>>& filters) {
    const auto& prunable = net.prunable_layers();
    auto& owners = net.filter_owners();
    for (const auto& [p, f] : filters) {
        require(p < prunable.size(), ErrorCode::lookup,
                "apply_filter_prune: prunable layer index " + std::to_string(p) + " out of range");
        const auto& layer = net.layers()[prunable[p]];
        require(f >= 0 && f < layer.spec.out, ErrorCode::lookup,
                "apply_filter_prune: filter " + std::to_string(f) + " out of range in layer " +
                    layer.name);
        require(owners[p][static_cast<std::size_t>(f)] == kFreeOwner, ErrorCode::ownership,
                "apply_filter_prune: filter " + std::to_string(f) + " of layer " + layer.name +
                    " is owned by task " +
                    std::to_string(owners[p][static_cast<std::size_t>(f)]));
    }
    for (const auto& [p, f] : filters) {
        auto& layer = net.layers()[prunable[p]];
        const std::int64_t per_out = layer.spec.weight_count() / layer.spec.out;
        for (std::int64_t j = 0; j < per_out; ++j)
            layer.weight->data[static_cast<std::size_t>(f * per_out + j)] = 0.0f;
        if (layer.bias) layer.bias->data[static_cast<std::size_t>(f)] = 0.0f;
        if (net.separate_bias() && layer.bias_slot >= 0 && !net.tasks().empty()) {
            auto& rec = net.tasks().back();
            rec.private_biases[static_cast<std::size_t>(layer.bias_slot)]
                ->data[static_cast<std::size_t>(f)] = 0.0f;
        }
    }
}

std::vector<std::pair<std::size_t, std::int64_t>> filter_prune_step(PackedNetwork& net,
                                                                    std::int64_t n_filters) {
    const auto scores = taylor_filter_scores(net);
    const auto& owners = net.filter_owners();

    std::vector<std::pair<std::size_t, std::int64_t>> eligible;
    for (std::size_t p = 0; p < owners.size(); ++p)
        for (std::int64_t f = 0; f < static_cast<std::int64_t>(owners[p].size()); ++f)
            if (owners[p][static_cast<std::size_t>(f)] == kFreeOwner) eligible.push_back({p, f});

    require(n_filters >= 0 && n_filters < static_cast<std::int64_t>(eligible.size()),
            ErrorCode::input,
            "filter_prune_step: cannot prune " + std::to_string(n_filters) + " of " +
                std::to_string(eligible.size()) + " remaining filters");

    // Globally lowest-scored first; deterministic (layer, filter) tie-break.
    std::sort(eligible.begin(), eligible.end(), [&](const auto& a, const auto& b) {
        const float sa = scores[a.first][static_cast<std::size_t>(a.second)];
        const float sb = scores[b.first][static_cast<std::size_t>(b.second)];
        if (sa != sb) return sa < sb;
        return a < b;
    });
    std::vector<std::pair<std::size_t, std::int64_t>> selected(
        eligible.begin(), eligible.begin() + n_filters);
    apply_filter_prune(net, selected);

    // Zero every filter's incoming weights from the channels just pruned:
    // those channels stay free and will carry later tasks. For filters that
    // are already zero there this is a bit-identical rewrite.
    const auto& prunable = net.prunable_layers();
    for (std::size_t q = 0; q < prunable.size(); ++q) {
        const auto src = net.channel_sources()[q];
        if (src.prev < 0) continue;
        auto& layer = net.layers()[prunable[q]];
        const std::int64_t in = layer.spec.in;
        const std::int64_t per_out = layer.spec.weight_count() / layer.spec.out;
        const std::int64_t per_in = per_out / in;
        for (std::int64_t c = 0; c < in; ++c) {
            const std::int64_t src_filter = c / src.group;
            const bool pruned_src =
                std::find(selected.begin(), selected.end(),
                          std::make_pair(static_cast<std::size_t>(src.prev), src_filter)) !=
                selected.end();
            if (!pruned_src) continue;
            for (std::int64_t f = 0; f < layer.spec.out; ++f)
                for (std::int64_t j = 0; j < per_in; ++j)
                    layer.weight->data[static_cast<std::size_t>(f * per_out + c * per_in + j)] =
                        0.0f;
        }
    }
    return selected;
}

} // namespace taskpack
