#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "taskpack/network.hpp"

namespace taskpack {

// Single-file layout, little-endian throughout:
//   magic "PKNT", version u16, layer count u32, task count u32, flags u8,
//   seed u64, input shape, per-layer [shape record, weight bytes, bias
//   bytes?, batch-norm buffers?], encoded ownership stream, task table
//   (length-prefixed name, head weights), CRC32 of all preceding bytes.
// Flags: bit0 biases_frozen, bit1 batchnorm_frozen, bit2 separate_bias,
// bit3 filter_pruning.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save(const PackedNetwork& net, const std::string& path);
std::unique_ptr<PackedNetwork> load(const std::string& path);

// Dense single-task view: weights outside the task's inference mask are
// materialized as zeros, the task's head becomes task 1. Loading the file
// and running a plain forward reproduces infer(net, t, .) bitwise.
void export_task(const PackedNetwork& net, TaskId t, const std::string& path);

// In-memory forms, used by save/load and direct in tests.
std::vector<std::uint8_t> save_bytes(const PackedNetwork& net);
std::unique_ptr<PackedNetwork> load_bytes(const std::vector<std::uint8_t>& bytes);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

} // namespace taskpack
