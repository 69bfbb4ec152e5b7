#pragma once

#include <cstdint>
#include <vector>

#include "taskpack/error.hpp"

namespace taskpack {

using TaskId = int;
inline constexpr std::uint8_t kFreeOwner = 0;

// Byte-per-entry bitmask (0/1), one vector per prunable layer.
using BitMask = std::vector<std::uint8_t>;
using LayerMasks = std::vector<BitMask>;

// Per-parameter task owner, one entry per prunable weight. FREE = 0; tasks
// own 1..N in order of addition. Runtime form is one byte per entry; the
// compact log2 packing applies to the serialized form only.
class OwnershipMap {
public:
    OwnershipMap() = default;
    explicit OwnershipMap(std::vector<std::size_t> layer_sizes);
    explicit OwnershipMap(std::vector<std::vector<std::uint8_t>> owners);

    std::size_t layer_count() const { return owners_.size(); }
    const std::vector<std::uint8_t>& layer(std::size_t i) const { return owners_[i]; }
    std::vector<std::vector<std::uint8_t>>& raw() { return owners_; }
    const std::vector<std::vector<std::uint8_t>>& raw() const { return owners_; }

    TaskId task_count() const { return task_count_; }
    TaskId register_task();

    std::uint64_t total_entries() const;
    std::uint64_t free_count() const;
    std::uint64_t owned_count(TaskId t) const;

    // Distinct owners present, counting FREE only if free entries remain.
    std::uint32_t state_count() const;

    // Entry assignment is append-only: a nonzero owner never changes.
    void commit_survivors(TaskId t, std::size_t layer_index,
                          const std::vector<std::int64_t>& survivor_indices);

private:
    std::vector<std::vector<std::uint8_t>> owners_;
    TaskId task_count_ = 0;
};

enum class UpdatePhase { training, retraining };

// Bit i = 1 iff 1 <= owner[i] <= t: the network state at task t's freeze.
LayerMasks inference_mask(const OwnershipMap& map, TaskId t);

// Forward mask while task t trains: free weights plus everything owned by
// tasks before t. Requires that t has not pruned yet.
LayerMasks training_active_mask(const OwnershipMap& map, TaskId t);

// Which weights SGD may touch: free weights during training, task-t weights
// during retraining.
LayerMasks update_mask(const OwnershipMap& map, TaskId t, UpdatePhase phase);

// Serialized ownership stream: entries packed at ceil(log2(states)) bits,
// little-endian within bytes, lowest index in the least significant bits.
// `states` is the palette of owner values in ascending order; stored entries
// are palette ranks.
struct EncodedMask {
    std::uint32_t bits_per_entry = 1;
    std::uint32_t state_count = 1;
    std::vector<std::uint8_t> states;
    std::vector<std::uint64_t> layer_entry_counts;
    std::uint64_t total_entries = 0;
    std::vector<std::uint8_t> bytes;
};

EncodedMask encode(const OwnershipMap& map);
OwnershipMap decode(const EncodedMask& encoded);

// ceil(param_count * max(1, ceil(log2(state_count))) / 8)
std::uint64_t overhead_bytes(std::uint64_t param_count, std::uint32_t state_count);

} // namespace taskpack
