#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taskpack/network.hpp"

namespace taskpack {

enum class GeneratorKind : std::uint8_t { gratings = 0, gaussian_blobs = 1, permuted_base = 2 };

// Synthetic task recipe. Generation is a pure function of this struct; the
// train and eval splits draw from disjoint seed streams.
struct TaskDatasetSpec {
    std::string name = "task";
    GeneratorKind kind = GeneratorKind::gratings;
    std::int64_t class_count = 5;
    std::int64_t train_samples = 2000;
    std::int64_t eval_samples = 1000;
    std::vector<std::int64_t> input_shape = {1, 20, 20};
    // gratings / gaussian_blobs: selects the task's orientation band or blob
    // ring; permuted_base: the pixel permutation seed, 0 = identity.
    std::int64_t variation = 0;
    double noise = 0.25;
    std::uint64_t seed = 1;
};

struct SplitDataset {
    Dataset train;
    Dataset eval;
};

SplitDataset generate_dataset(const TaskDatasetSpec& spec);

const char* generator_kind_name(GeneratorKind k);
GeneratorKind generator_kind_from_name(const std::string& name);

} // namespace taskpack
