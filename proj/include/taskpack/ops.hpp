#pragma once

#include <cstdint>
#include <vector>

#include "taskpack/tensor.hpp"

namespace taskpack {

// Forward operations. Passing a tape records the op for reverse-mode
// differentiation; a null tape is a pure (inference) evaluation.
// All reductions run in fixed row-major order so repeated evaluation is
// bitwise reproducible.

// y[n,o] = sum_i x[n,i] * W[o,i] + b[o]; b may be null.
TensorPtr linear_forward(Tape* tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// Cross-correlation of x[B,C,H,W] with k[F,C,kh,kw]; b may be null.
TensorPtr conv2d_forward(Tape* tape, const TensorPtr& x, const TensorPtr& k, const TensorPtr& b,
                         int stride, int pad);

enum class BatchNormMode { train, eval };

// Per-channel normalization over batch and spatial axes. Train mode uses
// batch statistics and updates the running buffers in place by EMA; eval
// mode normalizes by the running buffers and leaves them untouched.
TensorPtr batchnorm_forward(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                            const TensorPtr& bias, const TensorPtr& running_mean,
                            const TensorPtr& running_var, BatchNormMode mode, float momentum,
                            float epsilon);

TensorPtr relu(Tape* tape, const TensorPtr& x);
TensorPtr maxpool2x2(Tape* tape, const TensorPtr& x);
TensorPtr flatten(Tape* tape, const TensorPtr& x);

// Mean over the batch of -log softmax(logits)[label]; max-subtracted for
// stability. Returns a scalar tensor.
TensorPtr softmax_xent(Tape* tape, const TensorPtr& logits, const std::vector<std::int64_t>& labels);

// param[i] -= lr * grad[i] wherever mask[i] != 0. Entries with mask 0 are
// left bit-identical.
void sgd_masked_step(Tensor& param, const std::vector<float>& grad, float lr,
                     const std::vector<std::uint8_t>& mask);

// Unmasked variant, used where every entry is trainable.
void sgd_step(Tensor& param, const std::vector<float>& grad, float lr);

} // namespace taskpack
