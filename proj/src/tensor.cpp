#include "taskpack/ops.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace taskpack {

std::string shape_str(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

void Tape::backward(const TensorPtr& loss) {
    require(loss != nullptr, ErrorCode::usage, "backward: null loss");
    require(loss->numel() == 1, ErrorCode::usage,
            "backward: loss must be scalar, got shape " + shape_str(loss->shape));

    // Reset every gradient the sweep can touch, then seed the loss.
    std::set<Tensor*> seen;
    for (auto& n : nodes_) {
        for (auto& t : n.inputs) {
            if (t && seen.insert(t.get()).second) {
                t->ensure_grad();
                t->zero_grad();
            }
        }
        if (n.output && seen.insert(n.output.get()).second) {
            n.output->ensure_grad();
            n.output->zero_grad();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0f;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward) it->backward();
    }
}

TensorPtr linear_forward(Tape* tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    require(x->shape.size() == 2, ErrorCode::dimension,
            "linear: input must be 2-D, got " + shape_str(x->shape));
    require(w->shape.size() == 2, ErrorCode::dimension,
            "linear: weight must be 2-D, got " + shape_str(w->shape));
    const std::int64_t batch = x->dim(0), in = x->dim(1);
    const std::int64_t out = w->dim(0);
    require(w->dim(1) == in, ErrorCode::dimension,
            "linear: inner dimensions disagree, input " + shape_str(x->shape) + " vs weight " +
                shape_str(w->shape));
    if (b) {
        require(b->numel() == out, ErrorCode::dimension,
                "linear: bias " + shape_str(b->shape) + " does not match weight " +
                    shape_str(w->shape));
    }

    auto y = make_tensor({batch, out});
    const float* xd = x->data.data();
    const float* wd = w->data.data();
    float* yd = y->data.data();
    for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t o = 0; o < out; ++o) {
            float acc = 0.0f;
            const float* xr = xd + n * in;
            const float* wr = wd + o * in;
            for (std::int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            if (b) acc += b->data[static_cast<std::size_t>(o)];
            yd[n * out + o] = acc;
        }
    }

    if (tape) {
        std::vector<TensorPtr> inputs = {x, w};
        if (b) inputs.push_back(b);
        tape->record(inputs, y, [x, w, b, y, batch, in, out]() {
            const float* gy = y->grad.data();
            const float* xd = x->data.data();
            const float* wd = w->data.data();
            float* gx = x->grad.data();
            float* gw = w->grad.data();
            for (std::int64_t n = 0; n < batch; ++n) {
                for (std::int64_t o = 0; o < out; ++o) {
                    const float g = gy[n * out + o];
                    const float* wr = wd + o * in;
                    const float* xr = xd + n * in;
                    float* gxr = gx + n * in;
                    float* gwr = gw + o * in;
                    for (std::int64_t i = 0; i < in; ++i) {
                        gxr[i] += g * wr[i];
                        gwr[i] += g * xr[i];
                    }
                    if (b) b->grad[static_cast<std::size_t>(o)] += g;
                }
            }
        });
    }
    return y;
}

TensorPtr conv2d_forward(Tape* tape, const TensorPtr& x, const TensorPtr& k, const TensorPtr& b,
                         int stride, int pad) {
    require(x->shape.size() == 4, ErrorCode::dimension,
            "conv2d: input must be 4-D, got " + shape_str(x->shape));
    require(k->shape.size() == 4, ErrorCode::dimension,
            "conv2d: kernel must be 4-D, got " + shape_str(k->shape));
    require(stride >= 1 && pad >= 0 && k->dim(2) >= 1, ErrorCode::input,
            "conv2d: stride must be >= 1 and pad >= 0");
    const std::int64_t batch = x->dim(0), cin = x->dim(1), h = x->dim(2), w = x->dim(3);
    const std::int64_t fout = k->dim(0), kh = k->dim(2), kw = k->dim(3);
    require(k->dim(1) == cin, ErrorCode::dimension,
            "conv2d: kernel channels " + shape_str(k->shape) + " do not match input " +
                shape_str(x->shape));
    const std::int64_t hn = h + 2 * pad - kh;
    const std::int64_t wn = w + 2 * pad - kw;
    require(hn >= 0 && wn >= 0 && hn % stride == 0 && wn % stride == 0, ErrorCode::dimension,
            "conv2d: output size of input " + shape_str(x->shape) + " with kernel " +
                shape_str(k->shape) + " is not a positive integer");
    const std::int64_t ho = hn / stride + 1;
    const std::int64_t wo = wn / stride + 1;
    if (b) {
        require(b->numel() == fout, ErrorCode::dimension,
                "conv2d: bias " + shape_str(b->shape) + " does not match kernel " +
                    shape_str(k->shape));
    }

    auto y = make_tensor({batch, fout, ho, wo});
    const float* xd = x->data.data();
    const float* kd = k->data.data();
    float* yd = y->data.data();
    for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t f = 0; f < fout; ++f) {
            const float bias = b ? b->data[static_cast<std::size_t>(f)] : 0.0f;
            for (std::int64_t oh = 0; oh < ho; ++oh) {
                for (std::int64_t ow = 0; ow < wo; ++ow) {
                    float acc = 0.0f;
                    for (std::int64_t c = 0; c < cin; ++c) {
                        const float* xc = xd + (n * cin + c) * h * w;
                        const float* kc = kd + (f * cin + c) * kh * kw;
                        for (std::int64_t r = 0; r < kh; ++r) {
                            const std::int64_t ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= h) continue;
                            for (std::int64_t s = 0; s < kw; ++s) {
                                const std::int64_t iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= w) continue;
                                acc += xc[ih * w + iw] * kc[r * kw + s];
                            }
                        }
                    }
                    yd[((n * fout + f) * ho + oh) * wo + ow] = acc + bias;
                }
            }
        }
    }

    if (tape) {
        std::vector<TensorPtr> inputs = {x, k};
        if (b) inputs.push_back(b);
        tape->record(inputs, y, [x, k, b, y, stride, pad]() {
            const std::int64_t batch = x->dim(0), cin = x->dim(1), h = x->dim(2), w = x->dim(3);
            const std::int64_t fout = k->dim(0), kh = k->dim(2), kw = k->dim(3);
            const std::int64_t ho = y->dim(2), wo = y->dim(3);
            const float* gy = y->grad.data();
            const float* xd = x->data.data();
            const float* kd = k->data.data();
            float* gx = x->grad.data();
            float* gk = k->grad.data();
            for (std::int64_t n = 0; n < batch; ++n) {
                for (std::int64_t f = 0; f < fout; ++f) {
                    for (std::int64_t oh = 0; oh < ho; ++oh) {
                        for (std::int64_t ow = 0; ow < wo; ++ow) {
                            const float g = gy[((n * fout + f) * ho + oh) * wo + ow];
                            if (b) b->grad[static_cast<std::size_t>(f)] += g;
                            for (std::int64_t c = 0; c < cin; ++c) {
                                const float* xc = xd + (n * cin + c) * h * w;
                                float* gxc = gx + (n * cin + c) * h * w;
                                const float* kc = kd + (f * cin + c) * kh * kw;
                                float* gkc = gk + (f * cin + c) * kh * kw;
                                for (std::int64_t r = 0; r < kh; ++r) {
                                    const std::int64_t ih = oh * stride - pad + r;
                                    if (ih < 0 || ih >= h) continue;
                                    for (std::int64_t s = 0; s < kw; ++s) {
                                        const std::int64_t iw = ow * stride - pad + s;
                                        if (iw < 0 || iw >= w) continue;
                                        gxc[ih * w + iw] += g * kc[r * kw + s];
                                        gkc[r * kw + s] += g * xc[ih * w + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

TensorPtr batchnorm_forward(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                            const TensorPtr& bias, const TensorPtr& running_mean,
                            const TensorPtr& running_var, BatchNormMode mode, float momentum,
                            float epsilon) {
    require(x->shape.size() == 2 || x->shape.size() == 4, ErrorCode::dimension,
            "batchnorm: input must be 2-D or 4-D, got " + shape_str(x->shape));
    const std::int64_t channels = x->dim(1);
    require(channels > 0, ErrorCode::dimension, "batchnorm: zero channel count");
    for (const TensorPtr& t : {gain, bias, running_mean, running_var}) {
        require(t && t->numel() == channels, ErrorCode::dimension,
                "batchnorm: per-channel buffer does not match channel count " +
                    std::to_string(channels));
    }

    const std::int64_t batch = x->dim(0);
    const std::int64_t spatial = x->shape.size() == 4 ? x->dim(2) * x->dim(3) : 1;
    const std::int64_t reduce = batch * spatial;

    // Statistics used for normalization; snapshotted so the backward closure
    // sees the values of this call even after buffers move on.
    std::vector<float> mean(static_cast<std::size_t>(channels));
    std::vector<float> var(static_cast<std::size_t>(channels));
    if (mode == BatchNormMode::train) {
        for (std::int64_t c = 0; c < channels; ++c) {
            float m = 0.0f;
            for (std::int64_t n = 0; n < batch; ++n) {
                const float* xc = x->data.data() + (n * channels + c) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) m += xc[s];
            }
            m /= static_cast<float>(reduce);
            float v = 0.0f;
            for (std::int64_t n = 0; n < batch; ++n) {
                const float* xc = x->data.data() + (n * channels + c) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    const float d = xc[s] - m;
                    v += d * d;
                }
            }
            v /= static_cast<float>(reduce);
            mean[static_cast<std::size_t>(c)] = m;
            var[static_cast<std::size_t>(c)] = v;
            running_mean->data[static_cast<std::size_t>(c)] =
                (1.0f - momentum) * running_mean->data[static_cast<std::size_t>(c)] + momentum * m;
            running_var->data[static_cast<std::size_t>(c)] =
                (1.0f - momentum) * running_var->data[static_cast<std::size_t>(c)] + momentum * v;
        }
    } else {
        for (std::int64_t c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] = running_mean->data[static_cast<std::size_t>(c)];
            var[static_cast<std::size_t>(c)] = running_var->data[static_cast<std::size_t>(c)];
        }
    }

    auto y = make_tensor(x->shape);
    for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const float inv = 1.0f / std::sqrt(var[static_cast<std::size_t>(c)] + epsilon);
            const float g = gain->data[static_cast<std::size_t>(c)];
            const float bb = bias->data[static_cast<std::size_t>(c)];
            const float m = mean[static_cast<std::size_t>(c)];
            const float* xc = x->data.data() + (n * channels + c) * spatial;
            float* yc = y->data.data() + (n * channels + c) * spatial;
            for (std::int64_t s = 0; s < spatial; ++s) yc[s] = g * (xc[s] - m) * inv + bb;
        }
    }

    if (tape) {
        const bool train = (mode == BatchNormMode::train);
        tape->record({x, gain, bias}, y,
                     [x, gain, bias, y, mean, var, epsilon, train, batch, channels, spatial]() {
            const std::int64_t reduce = batch * spatial;
            const float* gy = y->grad.data();
            for (std::int64_t c = 0; c < channels; ++c) {
                const float m = mean[static_cast<std::size_t>(c)];
                const float inv = 1.0f / std::sqrt(var[static_cast<std::size_t>(c)] + epsilon);
                const float g = gain->data[static_cast<std::size_t>(c)];
                float sum_gy = 0.0f, sum_gy_xhat = 0.0f;
                for (std::int64_t n = 0; n < batch; ++n) {
                    const float* xc = x->data.data() + (n * channels + c) * spatial;
                    const float* gyc = gy + (n * channels + c) * spatial;
                    for (std::int64_t s = 0; s < spatial; ++s) {
                        sum_gy += gyc[s];
                        sum_gy_xhat += gyc[s] * (xc[s] - m) * inv;
                    }
                }
                gain->grad[static_cast<std::size_t>(c)] += sum_gy_xhat;
                bias->grad[static_cast<std::size_t>(c)] += sum_gy;
                for (std::int64_t n = 0; n < batch; ++n) {
                    const float* xc = x->data.data() + (n * channels + c) * spatial;
                    const float* gyc = gy + (n * channels + c) * spatial;
                    float* gxc = x->grad.data() + (n * channels + c) * spatial;
                    for (std::int64_t s = 0; s < spatial; ++s) {
                        if (train) {
                            const float xhat = (xc[s] - m) * inv;
                            gxc[s] += g * inv *
                                      (gyc[s] - sum_gy / static_cast<float>(reduce) -
                                       xhat * sum_gy_xhat / static_cast<float>(reduce));
                        } else {
                            gxc[s] += g * inv * gyc[s];
                        }
                    }
                }
            }
        });
    }
    return y;
}

TensorPtr relu(Tape* tape, const TensorPtr& x) {
    auto y = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i)
        y->data[i] = x->data[i] > 0.0f ? x->data[i] : 0.0f;
    if (tape) {
        tape->record({x}, y, [x, y]() {
            for (std::size_t i = 0; i < x->data.size(); ++i)
                if (x->data[i] > 0.0f) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

TensorPtr maxpool2x2(Tape* tape, const TensorPtr& x) {
    require(x->shape.size() == 4, ErrorCode::dimension,
            "maxpool2x2: input must be 4-D, got " + shape_str(x->shape));
    const std::int64_t batch = x->dim(0), channels = x->dim(1), h = x->dim(2), w = x->dim(3);
    require(h % 2 == 0 && w % 2 == 0, ErrorCode::dimension,
            "maxpool2x2: spatial dims must be even, got " + shape_str(x->shape));
    const std::int64_t ho = h / 2, wo = w / 2;

    auto y = make_tensor({batch, channels, ho, wo});
    // First max in block row-major order wins ties so backward routing is fixed.
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(y->numel()));
    for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const float* xc = x->data.data() + (n * channels + c) * h * w;
            float* yc = y->data.data() + (n * channels + c) * ho * wo;
            std::int64_t* ac = argmax->data() + (n * channels + c) * ho * wo;
            for (std::int64_t oh = 0; oh < ho; ++oh) {
                for (std::int64_t ow = 0; ow < wo; ++ow) {
                    std::int64_t best = (2 * oh) * w + 2 * ow;
                    float bv = xc[best];
                    for (int r = 0; r < 2; ++r) {
                        for (int s = 0; s < 2; ++s) {
                            const std::int64_t idx = (2 * oh + r) * w + (2 * ow + s);
                            if (xc[idx] > bv) {
                                bv = xc[idx];
                                best = idx;
                            }
                        }
                    }
                    yc[oh * wo + ow] = bv;
                    ac[oh * wo + ow] = best;
                }
            }
        }
    }
    if (tape) {
        tape->record({x}, y, [x, y, argmax, batch, channels, h, w, ho, wo]() {
            for (std::int64_t n = 0; n < batch; ++n) {
                for (std::int64_t c = 0; c < channels; ++c) {
                    float* gxc = x->grad.data() + (n * channels + c) * h * w;
                    const float* gyc = y->grad.data() + (n * channels + c) * ho * wo;
                    const std::int64_t* ac = argmax->data() + (n * channels + c) * ho * wo;
                    for (std::int64_t i = 0; i < ho * wo; ++i) gxc[ac[i]] += gyc[i];
                }
            }
        });
    }
    return y;
}

TensorPtr flatten(Tape* tape, const TensorPtr& x) {
    require(!x->shape.empty(), ErrorCode::dimension, "flatten: scalar input");
    const std::int64_t batch = x->dim(0);
    const std::int64_t rest = batch == 0 ? 0 : x->numel() / batch;
    auto y = make_tensor({batch, rest}, x->data);
    if (tape) {
        tape->record({x}, y, [x, y]() {
            for (std::size_t i = 0; i < x->data.size(); ++i) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

TensorPtr softmax_xent(Tape* tape, const TensorPtr& logits,
                       const std::vector<std::int64_t>& labels) {
    require(logits->shape.size() == 2, ErrorCode::dimension,
            "softmax_xent: logits must be 2-D, got " + shape_str(logits->shape));
    const std::int64_t batch = logits->dim(0), classes = logits->dim(1);
    require(static_cast<std::int64_t>(labels.size()) == batch, ErrorCode::dimension,
            "softmax_xent: label count " + std::to_string(labels.size()) +
                " does not match batch " + std::to_string(batch));
    for (auto l : labels)
        require(l >= 0 && l < classes, ErrorCode::input,
                "softmax_xent: label " + std::to_string(l) + " outside [0," +
                    std::to_string(classes) + ")");

    auto loss = make_tensor({1});
    float total = 0.0f;
    for (std::int64_t n = 0; n < batch; ++n) {
        const float* row = logits->data.data() + n * classes;
        float m = row[0];
        for (std::int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
        float denom = 0.0f;
        for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - m);
        total += std::log(denom) - (row[labels[static_cast<std::size_t>(n)]] - m);
    }
    loss->data[0] = total / static_cast<float>(batch);

    if (tape) {
        tape->record({logits}, loss, [logits, loss, labels, batch, classes]() {
            const float g = loss->grad[0] / static_cast<float>(batch);
            for (std::int64_t n = 0; n < batch; ++n) {
                const float* row = logits->data.data() + n * classes;
                float* grow = logits->grad.data() + n * classes;
                float m = row[0];
                for (std::int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
                float denom = 0.0f;
                for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - m);
                for (std::int64_t c = 0; c < classes; ++c) {
                    const float p = std::exp(row[c] - m) / denom;
                    grow[c] += g * (p - (labels[static_cast<std::size_t>(n)] == c ? 1.0f : 0.0f));
                }
            }
        });
    }
    return loss;
}

void sgd_masked_step(Tensor& param, const std::vector<float>& grad, float lr,
                     const std::vector<std::uint8_t>& mask) {
    require(grad.size() == param.data.size(), ErrorCode::dimension,
            "sgd_masked_step: grad length " + std::to_string(grad.size()) +
                " does not match param length " + std::to_string(param.data.size()));
    require(mask.size() == param.data.size(), ErrorCode::dimension,
            "sgd_masked_step: mask length " + std::to_string(mask.size()) +
                " does not match param length " + std::to_string(param.data.size()));
    for (std::size_t i = 0; i < param.data.size(); ++i)
        if (mask[i]) param.data[i] -= lr * grad[i];
}

void sgd_step(Tensor& param, const std::vector<float>& grad, float lr) {
    require(grad.size() == param.data.size(), ErrorCode::dimension,
            "sgd_step: grad length does not match param length");
    for (std::size_t i = 0; i < param.data.size(); ++i) param.data[i] -= lr * grad[i];
}

} // namespace taskpack
