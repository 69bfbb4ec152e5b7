#include "taskpack/ownership.hpp"

#include <algorithm>
#include <array>

namespace taskpack {

OwnershipMap::OwnershipMap(std::vector<std::size_t> layer_sizes) {
    owners_.reserve(layer_sizes.size());
    for (auto n : layer_sizes) owners_.emplace_back(n, kFreeOwner);
}

OwnershipMap::OwnershipMap(std::vector<std::vector<std::uint8_t>> owners)
    : owners_(std::move(owners)) {
    std::uint8_t max_owner = 0;
    for (const auto& layer : owners_)
        for (auto o : layer) max_owner = std::max(max_owner, o);
    task_count_ = static_cast<TaskId>(max_owner);
}

TaskId OwnershipMap::register_task() {
    require(task_count_ < 255, ErrorCode::capacity, "ownership: at most 255 tasks supported");
    return ++task_count_;
}

std::uint64_t OwnershipMap::total_entries() const {
    std::uint64_t n = 0;
    for (const auto& layer : owners_) n += layer.size();
    return n;
}

std::uint64_t OwnershipMap::free_count() const { return owned_count(kFreeOwner); }

std::uint64_t OwnershipMap::owned_count(TaskId t) const {
    std::uint64_t n = 0;
    for (const auto& layer : owners_)
        for (auto o : layer)
            if (o == t) ++n;
    return n;
}

std::uint32_t OwnershipMap::state_count() const {
    std::array<bool, 256> present{};
    for (const auto& layer : owners_)
        for (auto o : layer) present[o] = true;
    std::uint32_t n = 0;
    for (bool p : present) n += p ? 1u : 0u;
    return n;
}

void OwnershipMap::commit_survivors(TaskId t, std::size_t layer_index,
                                    const std::vector<std::int64_t>& survivor_indices) {
    require(t >= 1 && t <= task_count_, ErrorCode::lookup,
            "commit_survivors: unknown task " + std::to_string(t));
    require(layer_index < owners_.size(), ErrorCode::lookup,
            "commit_survivors: layer index " + std::to_string(layer_index) + " out of range");
    auto& layer = owners_[layer_index];
    // Validate first so a failed commit leaves the map untouched.
    for (auto i : survivor_indices) {
        require(i >= 0 && static_cast<std::size_t>(i) < layer.size(), ErrorCode::input,
                "commit_survivors: index " + std::to_string(i) + " out of range");
        require(layer[static_cast<std::size_t>(i)] == kFreeOwner, ErrorCode::ownership,
                "commit_survivors: index " + std::to_string(i) + " already owned by task " +
                    std::to_string(layer[static_cast<std::size_t>(i)]));
    }
    for (auto i : survivor_indices)
        layer[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(t);
}

LayerMasks inference_mask(const OwnershipMap& map, TaskId t) {
    require(t >= 1 && t <= map.task_count(), ErrorCode::lookup,
            "inference_mask: unknown task " + std::to_string(t));
    LayerMasks masks;
    masks.reserve(map.layer_count());
    for (std::size_t l = 0; l < map.layer_count(); ++l) {
        const auto& owners = map.layer(l);
        BitMask m(owners.size());
        for (std::size_t i = 0; i < owners.size(); ++i)
            m[i] = (owners[i] >= 1 && owners[i] <= t) ? 1 : 0;
        masks.push_back(std::move(m));
    }
    return masks;
}

LayerMasks training_active_mask(const OwnershipMap& map, TaskId t) {
    require(t >= 1 && t <= map.task_count(), ErrorCode::lookup,
            "training_active_mask: unknown task " + std::to_string(t));
    LayerMasks masks;
    masks.reserve(map.layer_count());
    for (std::size_t l = 0; l < map.layer_count(); ++l) {
        const auto& owners = map.layer(l);
        BitMask m(owners.size());
        for (std::size_t i = 0; i < owners.size(); ++i) {
            require(owners[i] < t, ErrorCode::state,
                    "training_active_mask: task " + std::to_string(t) +
                        " has already committed weights; training phase is over");
            m[i] = 1; // free or owned by an earlier task
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

LayerMasks update_mask(const OwnershipMap& map, TaskId t, UpdatePhase phase) {
    require(t >= 1 && t <= map.task_count(), ErrorCode::lookup,
            "update_mask: unknown task " + std::to_string(t));
    LayerMasks masks;
    masks.reserve(map.layer_count());
    for (std::size_t l = 0; l < map.layer_count(); ++l) {
        const auto& owners = map.layer(l);
        BitMask m(owners.size());
        for (std::size_t i = 0; i < owners.size(); ++i) {
            if (phase == UpdatePhase::training) {
                require(owners[i] < t, ErrorCode::state,
                        "update_mask: task " + std::to_string(t) +
                            " has already committed weights; training phase is over");
                m[i] = owners[i] == kFreeOwner ? 1 : 0;
            } else {
                require(owners[i] <= t, ErrorCode::state,
                        "update_mask: a later task owns weights; task " + std::to_string(t) +
                            " is frozen");
                m[i] = owners[i] == t ? 1 : 0;
            }
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

namespace {

std::uint32_t ceil_log2(std::uint32_t n) {
    std::uint32_t bits = 0;
    while ((1ull << bits) < n) ++bits;
    return bits;
}

} // namespace

std::uint64_t overhead_bytes(std::uint64_t param_count, std::uint32_t state_count) {
    const std::uint64_t bits = std::max<std::uint64_t>(1, ceil_log2(state_count));
    return (param_count * bits + 7) / 8;
}

EncodedMask encode(const OwnershipMap& map) {
    std::array<bool, 256> present{};
    for (std::size_t l = 0; l < map.layer_count(); ++l)
        for (auto o : map.layer(l)) present[o] = true;

    EncodedMask out;
    std::array<std::uint8_t, 256> rank{};
    for (int v = 0; v < 256; ++v) {
        if (!present[static_cast<std::size_t>(v)]) continue;
        rank[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(out.states.size());
        out.states.push_back(static_cast<std::uint8_t>(v));
    }
    if (out.states.empty()) out.states.push_back(kFreeOwner); // empty map edge case
    out.state_count = static_cast<std::uint32_t>(out.states.size());
    out.bits_per_entry = std::max<std::uint32_t>(1, ceil_log2(out.state_count));

    out.total_entries = map.total_entries();
    out.layer_entry_counts.reserve(map.layer_count());
    for (std::size_t l = 0; l < map.layer_count(); ++l)
        out.layer_entry_counts.push_back(map.layer(l).size());

    out.bytes.assign((out.total_entries * out.bits_per_entry + 7) / 8, 0);
    std::uint64_t bit = 0;
    for (std::size_t l = 0; l < map.layer_count(); ++l) {
        for (auto o : map.layer(l)) {
            const std::uint8_t value = rank[o];
            for (std::uint32_t j = 0; j < out.bits_per_entry; ++j, ++bit) {
                if (value & (1u << j))
                    out.bytes[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
            }
        }
    }
    return out;
}

OwnershipMap decode(const EncodedMask& encoded) {
    require(encoded.state_count >= 1 && encoded.states.size() == encoded.state_count,
            ErrorCode::format, "decode: state palette does not match state_count");
    require(encoded.bits_per_entry == std::max<std::uint32_t>(1, ceil_log2(encoded.state_count)),
            ErrorCode::format, "decode: bits_per_entry inconsistent with state_count");
    std::uint64_t declared = 0;
    for (auto n : encoded.layer_entry_counts) declared += n;
    require(declared == encoded.total_entries, ErrorCode::format,
            "decode: layer entry counts do not sum to total_entries");
    require(encoded.total_entries * encoded.bits_per_entry <= encoded.bytes.size() * 8ull,
            ErrorCode::format,
            "decode: declared entry count " + std::to_string(encoded.total_entries) +
                " exceeds bits available in stream of " + std::to_string(encoded.bytes.size()) +
                " bytes");

    std::vector<std::vector<std::uint8_t>> owners;
    owners.reserve(encoded.layer_entry_counts.size());
    std::uint64_t bit = 0;
    for (auto count : encoded.layer_entry_counts) {
        std::vector<std::uint8_t> layer(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t value = 0;
            for (std::uint32_t j = 0; j < encoded.bits_per_entry; ++j, ++bit)
                if (encoded.bytes[bit >> 3] & (1u << (bit & 7))) value |= 1u << j;
            require(value < encoded.state_count, ErrorCode::format,
                    "decode: entry value " + std::to_string(value) + " outside state palette");
            layer[i] = encoded.states[value];
        }
        owners.push_back(std::move(layer));
    }
    return OwnershipMap(std::move(owners));
}

} // namespace taskpack
