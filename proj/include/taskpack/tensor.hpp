#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "taskpack/error.hpp"

namespace taskpack {

// Dense row-major float32 tensor. Gradient buffer is allocated lazily by the
// tape; a tensor that never participates in backward carries no grad.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
    std::vector<float> grad; // empty or data.size()

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
    }
    Tensor(std::vector<std::int64_t> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<std::int64_t>(data.size()) == numel_of(shape), ErrorCode::dimension,
                "tensor data length does not match shape product");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape[i]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(std::vector<std::int64_t> shape) {
    return std::make_shared<Tensor>(std::move(shape));
}
inline TensorPtr make_tensor(std::vector<std::int64_t> shape, std::vector<float> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

std::string shape_str(const std::vector<std::int64_t>& s);

// Reverse-mode tape. Operations are appended in evaluation order, which is a
// valid topological order, so backward is a single reverse sweep.
class Tape {
public:
    struct Node {
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
    };

    void record(std::vector<TensorPtr> inputs, TensorPtr output, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. Gradients of all
    // tensors touched by the tape are reset first; contributions accumulate.
    void backward(const TensorPtr& loss);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

} // namespace taskpack
