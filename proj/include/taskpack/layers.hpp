#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taskpack/error.hpp"

namespace taskpack {

enum class LayerKind : std::uint8_t {
    linear = 0,
    conv2d = 1,
    batchnorm = 2,
    relu = 3,
    maxpool2x2 = 4,
    flatten = 5,
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::int64_t in = 0;  // features (linear) or channels (conv2d / batchnorm)
    std::int64_t out = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool has_bias = true;

    static LayerSpec linear(std::int64_t in, std::int64_t out, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::linear;
        s.in = in;
        s.out = out;
        s.has_bias = bias;
        return s;
    }
    static LayerSpec conv2d(std::int64_t in, std::int64_t out, int kernel, int stride = 1,
                            int pad = 0, bool bias = true) {
        require(kernel >= 1, ErrorCode::input, "conv2d layer: kernel size must be >= 1");
        require(stride >= 1, ErrorCode::input, "conv2d layer: stride must be >= 1");
        require(pad >= 0, ErrorCode::input, "conv2d layer: padding must be >= 0");
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in = in;
        s.out = out;
        s.kernel = kernel;
        s.stride = stride;
        s.pad = pad;
        s.has_bias = bias;
        return s;
    }
    static LayerSpec batchnorm(std::int64_t channels) {
        LayerSpec s;
        s.kind = LayerKind::batchnorm;
        s.in = channels;
        s.out = channels;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
    static LayerSpec maxpool() { return LayerSpec{LayerKind::maxpool2x2}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }

    bool prunable() const { return kind == LayerKind::linear || kind == LayerKind::conv2d; }
    std::int64_t weight_count() const {
        if (kind == LayerKind::linear) return in * out;
        if (kind == LayerKind::conv2d) return in * out * kernel * kernel;
        return 0;
    }
};

// Walks the stack validating every transition; returns the output shape
// (without the batch dimension).
std::vector<std::int64_t> infer_output_shape(const std::vector<LayerSpec>& layers,
                                             const std::vector<std::int64_t>& input_shape);

const char* layer_kind_name(LayerKind k);

} // namespace taskpack
