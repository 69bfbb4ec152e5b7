#pragma once

#include <cstdint>
#include <vector>

#include "taskpack/ownership.hpp"
#include "taskpack/tensor.hpp"

namespace taskpack {

class PackedNetwork;
struct Batch;

// Outcome of one layer's magnitude selection.
struct PruneDecision {
    std::vector<std::int64_t> pruned; // ascending flat indices
    std::int64_t eligible_count = 0;
    std::int64_t pruned_count = 0;
    std::int64_t retained_count = 0;
};

// Among eligible indices, picks the floor(ratio * eligible) entries of
// smallest absolute value; ties go to the smaller flat index. Ineligible
// indices are never selected.
PruneDecision magnitude_select(const Tensor& values, const BitMask& eligible, double ratio);

// Zeroes the selected entries exactly; everything else stays bit-identical.
void apply_prune(Tensor& values, const PruneDecision& decision);

struct BudgetLedger {
    std::vector<std::uint64_t> owned; // owned[t-1] = parameters owned by task t
    std::uint64_t free_entries = 0;
    std::uint64_t total = 0;
};

BudgetLedger budget_report(const OwnershipMap& map);

// Closed-form ledger for a prune-ratio sequence over a given total, no
// training involved: task t keeps eligible - floor(ratio * eligible).
BudgetLedger simulate_budget(std::uint64_t total, const std::vector<double>& ratios);

// Filter-importance scores from the most recent scored batch: per filter,
// |mean over batch and spatial positions of activation * d(loss)/d(activation)|,
// L2-normalized within each layer. Requires a prior score_batch() call.
std::vector<std::vector<float>> taylor_filter_scores(const PackedNetwork& net);

// Runs forward + backward on the batch for task t and keeps the recorded
// layer outputs for scoring.
void score_batch(PackedNetwork& net, TaskId t, const Batch& batch);

// Zeroes the globally lowest-scored n free filters (weights and bias), then
// zeroes every other filter's incoming weights from the pruned channels so
// later reuse of those channels cannot perturb committed outputs. Returns
// the pruned (prunable layer index, filter index) pairs; survivor commitment
// is the caller's (lifecycle's) job.
std::vector<std::pair<std::size_t, std::int64_t>> filter_prune_step(PackedNetwork& net,
                                                                    std::int64_t n_filters);

// Explicit-list form; raises an ownership violation if any listed filter is
// already owned. Entries are (prunable layer index, filter index).
void apply_filter_prune(PackedNetwork& net,
                        const std::vector<std::pair<std::size_t, std::int64_t>>& filters);

} // namespace taskpack
