#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "oracle.hpp"
#include "taskpack/ops.hpp"
#include "taskpack/rng.hpp"

using namespace taskpack;
using oracle::close_rel;
using oracle::dvec;

namespace {

dvec to_dvec(const std::vector<float>& v) { return dvec(v.begin(), v.end()); }

std::vector<float> random_floats(Rng& rng, std::size_t n, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform_f(lo, hi);
    return v;
}

// Scalar-izes a tensor on the tape as loss = sum_i c_i * y_i via a custom
// node, so any layer output can be gradient-checked.
TensorPtr dot_loss(Tape& tape, const TensorPtr& y, const dvec& c) {
    auto loss = make_tensor({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < y->data.size(); ++i) acc += c[i] * static_cast<double>(y->data[i]);
    loss->data[0] = static_cast<float>(acc);
    tape.record({y}, loss, [y, loss, c]() {
        for (std::size_t i = 0; i < y->data.size(); ++i)
            y->grad[i] += static_cast<float>(c[i]) * loss->grad[0];
    });
    return loss;
}

void check_grads(const char* what, const std::vector<float>& got, const dvec& want,
                 double tol = 1e-5) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        INFO(what << " grad entry " << i << ": got " << got[i] << " want " << want[i]);
        CHECK(close_rel(static_cast<double>(got[i]), want[i], tol));
    }
}

} // namespace

TEST_CASE("linear forward examples") {
    auto x = make_tensor({1, 2}, {1.0f, 2.0f});
    auto w_id = make_tensor({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    auto b0 = make_tensor({2}, {0.0f, 0.0f});
    auto y = linear_forward(nullptr, x, w_id, b0);
    CHECK(y->data == std::vector<float>{1.0f, 2.0f});

    auto w_zero = make_tensor({2, 2}, {0.0f, 0.0f, 0.0f, 0.0f});
    auto b = make_tensor({2}, {3.0f, 4.0f});
    y = linear_forward(nullptr, x, w_zero, b);
    CHECK(y->data == std::vector<float>{3.0f, 4.0f});

    auto x2 = make_tensor({1, 2}, {1.0f, -1.0f});
    auto w2 = make_tensor({1, 2}, {2.0f, 3.0f});
    auto b2 = make_tensor({1}, {0.5f});
    y = linear_forward(nullptr, x2, w2, b2);
    CHECK(y->data[0] == doctest::Approx(-0.5f));

    CHECK(linear_forward(nullptr, x, w_id, nullptr)->data == std::vector<float>{1.0f, 2.0f});
}

TEST_CASE("linear shape mismatch names both shapes") {
    auto x = make_tensor({1, 3});
    auto w = make_tensor({2, 2});
    try {
        linear_forward(nullptr, x, w, nullptr);
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension);
        CHECK(std::string(e.what()).find("[1,3]") != std::string::npos);
        CHECK(std::string(e.what()).find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("conv2d forward examples") {
    // 1x1 identity kernel passes input through.
    auto x = make_tensor({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto k1 = make_tensor({1, 1, 1, 1}, {1.0f});
    auto y = conv2d_forward(nullptr, x, k1, nullptr, 1, 0);
    CHECK(y->data == x->data);

    // All-zero kernel with bias c gives constant c.
    auto kz = make_tensor({1, 1, 1, 1}, {0.0f});
    auto bc = make_tensor({1}, {2.5f});
    y = conv2d_forward(nullptr, x, kz, bc, 1, 0);
    CHECK(y->data == std::vector<float>(4, 2.5f));

    // 3x3 ones through 2x2 ones kernel: every window sums to 4.
    auto ones = make_tensor({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    auto k22 = make_tensor({1, 1, 2, 2}, std::vector<float>(4, 1.0f));
    y = conv2d_forward(nullptr, ones, k22, nullptr, 1, 0);
    CHECK(y->shape == std::vector<std::int64_t>{1, 1, 2, 2});
    CHECK(y->data == std::vector<float>(4, 4.0f));
}

TEST_CASE("conv2d non-integer output size is a dimension error") {
    auto x = make_tensor({1, 1, 5, 5});
    auto k = make_tensor({1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d_forward(nullptr, x, k, nullptr, 2, 0), Error);
}

TEST_CASE("batchnorm forward examples") {
    auto gain1 = make_tensor({1}, {1.0f});
    auto bias0 = make_tensor({1}, {0.0f});
    auto rm = make_tensor({1}, {0.0f});
    auto rv = make_tensor({1}, {1.0f});

    auto x = make_tensor({2, 1}, {0.3f, -0.7f});
    auto y = batchnorm_forward(nullptr, x, gain1, bias0, rm, rv, BatchNormMode::eval, 0.1f, 0.0f);
    CHECK(y->data == x->data);

    auto gain2 = make_tensor({1}, {2.0f});
    auto bias1 = make_tensor({1}, {1.0f});
    auto x3 = make_tensor({1, 1}, {3.0f});
    y = batchnorm_forward(nullptr, x3, gain2, bias1, rm, rv, BatchNormMode::eval, 0.1f, 0.0f);
    CHECK(y->data[0] == doctest::Approx(7.0f));

    // Train mode on {-1, 1}: mean 0, variance 1, so output is unchanged.
    auto rm2 = make_tensor({1}, {0.0f});
    auto rv2 = make_tensor({1}, {1.0f});
    auto xb = make_tensor({2, 1}, {-1.0f, 1.0f});
    y = batchnorm_forward(nullptr, xb, gain1, bias0, rm2, rv2, BatchNormMode::train, 0.1f, 0.0f);
    CHECK(y->data[0] == doctest::Approx(-1.0f));
    CHECK(y->data[1] == doctest::Approx(1.0f));
    // Running buffers moved by EMA with momentum 0.1.
    CHECK(rm2->data[0] == doctest::Approx(0.0f));
    CHECK(rv2->data[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 1.0f));
}

TEST_CASE("batchnorm rejects a zero channel count") {
    auto empty = make_tensor({2, 0});
    auto buf = make_tensor({0});
    try {
        batchnorm_forward(nullptr, empty, buf, buf, buf, buf, BatchNormMode::eval, 0.1f, 1e-5f);
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension);
    }
}

TEST_CASE("batchnorm eval leaves running buffers untouched") {
    auto gain = make_tensor({2}, {1.0f, 1.0f});
    auto bias = make_tensor({2}, {0.0f, 0.0f});
    auto rm = make_tensor({2}, {0.25f, -0.5f});
    auto rv = make_tensor({2}, {2.0f, 0.5f});
    auto before_m = rm->data;
    auto before_v = rv->data;
    auto x = make_tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    batchnorm_forward(nullptr, x, gain, bias, rm, rv, BatchNormMode::eval, 0.1f, 1e-5f);
    CHECK(rm->data == before_m);
    CHECK(rv->data == before_v);
}

TEST_CASE("relu, maxpool, flatten examples") {
    auto x = make_tensor({1, 3}, {-1.0f, 0.0f, 2.0f});
    CHECK(relu(nullptr, x)->data == std::vector<float>{0.0f, 0.0f, 2.0f});

    auto xm = make_tensor({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto ym = maxpool2x2(nullptr, xm);
    CHECK(ym->shape == std::vector<std::int64_t>{1, 1, 1, 1});
    CHECK(ym->data[0] == 4.0f);

    auto xo = make_tensor({1, 1, 3, 3});
    CHECK_THROWS_AS(maxpool2x2(nullptr, xo), Error);

    auto xf = make_tensor({2, 3, 4});
    auto yf = flatten(nullptr, xf);
    CHECK(yf->shape == std::vector<std::int64_t>{2, 12});
}

TEST_CASE("softmax cross-entropy examples") {
    auto uniform = make_tensor({1, 4}, {0.5f, 0.5f, 0.5f, 0.5f});
    auto loss = softmax_xent(nullptr, uniform, {2});
    CHECK(loss->data[0] == doctest::Approx(std::log(4.0f)).epsilon(1e-6));

    auto saturated = make_tensor({1, 2}, {1000.0f, 0.0f});
    loss = softmax_xent(nullptr, saturated, {0});
    CHECK(loss->data[0] == doctest::Approx(0.0f).epsilon(1e-6));

    auto two = make_tensor({1, 2}, {1.0f, 2.0f});
    loss = softmax_xent(nullptr, two, {0});
    CHECK(loss->data[0] == doctest::Approx(1.3132617f).epsilon(1e-6));

    CHECK_THROWS_AS(softmax_xent(nullptr, two, {5}), Error);
    CHECK_THROWS_AS(softmax_xent(nullptr, two, {-1}), Error);
}

TEST_CASE("softmax stays finite at logit magnitude 1e4") {
    auto big = make_tensor({2, 3}, {1e4f, -1e4f, 0.0f, -1e4f, 1e4f, 5.0f});
    auto loss = softmax_xent(nullptr, big, {1, 0});
    CHECK(std::isfinite(loss->data[0]));
}

TEST_CASE("backward of a plain sum gives all-ones") {
    Tape tape;
    auto x = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    auto y = relu(&tape, x); // all positive, passthrough
    auto loss = dot_loss(tape, y, dvec(6, 1.0));
    tape.backward(loss);
    CHECK(x->grad == std::vector<float>(6, 1.0f));
}

TEST_CASE("backward accumulates on shared inputs: sum of squares") {
    // y = linear(x, x): the same tensor plays input and weight, so the
    // gradient is the sum of both roles, d(sum x^2)/dx = 2x.
    Tape tape;
    auto x = make_tensor({1, 2}, {1.0f, 2.0f});
    auto y = linear_forward(&tape, x, x, nullptr);
    REQUIRE(y->numel() == 1);
    CHECK(y->data[0] == doctest::Approx(5.0f));
    tape.backward(y);
    CHECK(x->grad[0] == doctest::Approx(2.0f));
    CHECK(x->grad[1] == doctest::Approx(4.0f));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    auto x = make_tensor({1, 2}, {1.0f, 2.0f});
    auto y = relu(&tape, x);
    try {
        tape.backward(y);
        FAIL("expected usage error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::usage);
    }
}

TEST_CASE("gradient check: linear against finite differences") {
    Rng rng(101);
    for (int inst = 0; inst < 20; ++inst) {
        const std::int64_t batch = 1 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t in = 2 + static_cast<std::int64_t>(rng.below(5));
        const std::int64_t out = 1 + static_cast<std::int64_t>(rng.below(4));
        auto xv = random_floats(rng, static_cast<std::size_t>(batch * in));
        auto wv = random_floats(rng, static_cast<std::size_t>(out * in));
        auto bv = random_floats(rng, static_cast<std::size_t>(out));
        dvec c = to_dvec(random_floats(rng, static_cast<std::size_t>(batch * out)));

        Tape tape;
        auto x = make_tensor({batch, in}, xv);
        auto w = make_tensor({out, in}, wv);
        auto b = make_tensor({out}, bv);
        auto loss = dot_loss(tape, linear_forward(&tape, x, w, b), c);
        tape.backward(loss);

        auto f_of_x = [&](const dvec& th) {
            dvec y = oracle::ref_linear(th, batch, in, to_dvec(wv), out, nullptr);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i)
                acc += c[i] * (y[i] + to_dvec(bv)[i % static_cast<std::size_t>(out)]);
            return acc;
        };
        check_grads("linear x", x->grad, oracle::finite_diff(f_of_x, to_dvec(xv)));

        auto f_of_w = [&](const dvec& th) {
            dvec y = oracle::ref_linear(to_dvec(xv), batch, in, th, out, nullptr);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i)
                acc += c[i] * (y[i] + to_dvec(bv)[i % static_cast<std::size_t>(out)]);
            return acc;
        };
        check_grads("linear w", w->grad, oracle::finite_diff(f_of_w, to_dvec(wv)));

        auto f_of_b = [&](const dvec& th) {
            dvec y = oracle::ref_linear(to_dvec(xv), batch, in, to_dvec(wv), out, &th);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += c[i] * y[i];
            return acc;
        };
        check_grads("linear b", b->grad, oracle::finite_diff(f_of_b, to_dvec(bv)));
    }
}

TEST_CASE("gradient check: conv2d against finite differences") {
    Rng rng(202);
    for (int inst = 0; inst < 20; ++inst) {
        const std::int64_t batch = 1 + static_cast<std::int64_t>(rng.below(2));
        const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t fout = 1 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t kk = 1 + static_cast<std::int64_t>(rng.below(3));
        const int pad = static_cast<int>(rng.below(2));
        const std::int64_t h = kk + 2 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t w = kk + 2 + static_cast<std::int64_t>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(2));
        if ((h + 2 * pad - kk) % stride != 0 || (w + 2 * pad - kk) % stride != 0) continue;
        const std::int64_t ho = (h + 2 * pad - kk) / stride + 1;
        const std::int64_t wo = (w + 2 * pad - kk) / stride + 1;

        auto xv = random_floats(rng, static_cast<std::size_t>(batch * cin * h * w));
        auto kv = random_floats(rng, static_cast<std::size_t>(fout * cin * kk * kk));
        auto bv = random_floats(rng, static_cast<std::size_t>(fout));
        dvec c = to_dvec(random_floats(rng, static_cast<std::size_t>(batch * fout * ho * wo)));

        Tape tape;
        auto x = make_tensor({batch, cin, h, w}, xv);
        auto k = make_tensor({fout, cin, kk, kk}, kv);
        auto b = make_tensor({fout}, bv);
        auto loss = dot_loss(tape, conv2d_forward(&tape, x, k, b, stride, pad), c);
        tape.backward(loss);

        auto scalarize = [&](const dvec& y) {
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += c[i] * y[i];
            return acc;
        };
        auto f_of_x = [&](const dvec& th) {
            return scalarize(oracle::ref_conv2d(th, batch, cin, h, w, to_dvec(kv), fout, kk, kk,
                                                nullptr, stride, pad)) +
                   [&] {
                       double acc = 0.0;
                       for (std::int64_t n = 0; n < batch; ++n)
                           for (std::int64_t f = 0; f < fout; ++f)
                               for (std::int64_t i = 0; i < ho * wo; ++i)
                                   acc += c[static_cast<std::size_t>((n * fout + f) * ho * wo + i)] *
                                          static_cast<double>(bv[static_cast<std::size_t>(f)]);
                       return acc;
                   }();
        };
        check_grads("conv x", x->grad, oracle::finite_diff(f_of_x, to_dvec(xv)));

        auto f_of_k = [&](const dvec& th) {
            dvec bb = to_dvec(bv);
            return scalarize(oracle::ref_conv2d(to_dvec(xv), batch, cin, h, w, th, fout, kk, kk,
                                                &bb, stride, pad));
        };
        check_grads("conv k", k->grad, oracle::finite_diff(f_of_k, to_dvec(kv)));

        auto f_of_b = [&](const dvec& th) {
            return scalarize(oracle::ref_conv2d(to_dvec(xv), batch, cin, h, w, to_dvec(kv), fout,
                                                kk, kk, &th, stride, pad));
        };
        check_grads("conv b", b->grad, oracle::finite_diff(f_of_b, to_dvec(bv)));
    }
}

TEST_CASE("gradient check: batchnorm train and eval") {
    Rng rng(303);
    for (int inst = 0; inst < 20; ++inst) {
        const bool train = inst % 2 == 0;
        const std::int64_t batch = 2 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t channels = 1 + static_cast<std::int64_t>(rng.below(3));
        const bool spatial4d = rng.below(2) == 0;
        const std::int64_t hw = spatial4d ? 2 : 1;
        const std::int64_t spatial = hw * hw;

        auto xv = random_floats(rng, static_cast<std::size_t>(batch * channels * spatial), -2.0f,
                                2.0f);
        auto gv = random_floats(rng, static_cast<std::size_t>(channels), 0.5f, 1.5f);
        auto bv = random_floats(rng, static_cast<std::size_t>(channels));
        auto mv = random_floats(rng, static_cast<std::size_t>(channels), -0.5f, 0.5f);
        auto vv = random_floats(rng, static_cast<std::size_t>(channels), 0.5f, 2.0f);
        dvec c = to_dvec(random_floats(rng, xv.size()));
        const float eps = 1e-5f;

        Tape tape;
        auto shape = spatial4d ? std::vector<std::int64_t>{batch, channels, hw, hw}
                               : std::vector<std::int64_t>{batch, channels};
        auto x = make_tensor(shape, xv);
        auto gain = make_tensor({channels}, gv);
        auto bias = make_tensor({channels}, bv);
        auto rm = make_tensor({channels}, mv);
        auto rv = make_tensor({channels}, vv);
        auto y = batchnorm_forward(&tape, x, gain, bias, rm, rv,
                                   train ? BatchNormMode::train : BatchNormMode::eval, 0.1f, eps);
        auto loss = dot_loss(tape, y, c);
        tape.backward(loss);

        auto scalarize = [&](const dvec& y2) {
            double acc = 0.0;
            for (std::size_t i = 0; i < y2.size(); ++i) acc += c[i] * y2[i];
            return acc;
        };
        auto f_of_x = [&](const dvec& th) {
            return scalarize(oracle::ref_batchnorm(th, batch, channels, spatial, to_dvec(gv),
                                                   to_dvec(bv), to_dvec(mv), to_dvec(vv), train,
                                                   eps));
        };
        check_grads("bn x", x->grad, oracle::finite_diff(f_of_x, to_dvec(xv)));

        auto f_of_gain = [&](const dvec& th) {
            return scalarize(oracle::ref_batchnorm(to_dvec(xv), batch, channels, spatial, th,
                                                   to_dvec(bv), to_dvec(mv), to_dvec(vv), train,
                                                   eps));
        };
        check_grads("bn gain", gain->grad, oracle::finite_diff(f_of_gain, to_dvec(gv)));

        auto f_of_bias = [&](const dvec& th) {
            return scalarize(oracle::ref_batchnorm(to_dvec(xv), batch, channels, spatial,
                                                   to_dvec(gv), th, to_dvec(mv), to_dvec(vv),
                                                   train, eps));
        };
        check_grads("bn bias", bias->grad, oracle::finite_diff(f_of_bias, to_dvec(bv)));
    }
}

TEST_CASE("gradient check: relu, maxpool, flatten, softmax") {
    Rng rng(404);
    for (int inst = 0; inst < 20; ++inst) {
        // relu: keep inputs away from the kink.
        auto xv = random_floats(rng, 12);
        for (auto& v : xv)
            if (std::abs(v) < 0.05f) v += 0.1f;
        {
            Tape tape;
            auto x = make_tensor({3, 4}, xv);
            dvec c = to_dvec(random_floats(rng, 12));
            auto loss = dot_loss(tape, relu(&tape, x), c);
            tape.backward(loss);
            auto f = [&](const dvec& th) {
                dvec y = oracle::ref_relu(th);
                double acc = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) acc += c[i] * y[i];
                return acc;
            };
            check_grads("relu x", x->grad, oracle::finite_diff(f, to_dvec(xv)));
        }
        // maxpool: distinct values so the argmax is stable under the FD step.
        {
            std::vector<float> pv(16);
            std::vector<int> order(16);
            for (int i = 0; i < 16; ++i) order[static_cast<std::size_t>(i)] = i;
            std::vector<int> shuffled = order;
            Rng prng(rng.next_u64());
            prng.shuffle(shuffled);
            for (int i = 0; i < 16; ++i)
                pv[static_cast<std::size_t>(i)] =
                    static_cast<float>(shuffled[static_cast<std::size_t>(i)]) * 0.25f;
            Tape tape;
            auto x = make_tensor({1, 1, 4, 4}, pv);
            dvec c = to_dvec(random_floats(rng, 4));
            auto loss = dot_loss(tape, maxpool2x2(&tape, x), c);
            tape.backward(loss);
            auto f = [&](const dvec& th) {
                dvec y = oracle::ref_maxpool2x2(th, 1, 1, 4, 4);
                double acc = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) acc += c[i] * y[i];
                return acc;
            };
            check_grads("maxpool x", x->grad, oracle::finite_diff(f, to_dvec(pv), 1e-6));
        }
        // softmax_xent end to end.
        {
            const std::int64_t batch = 2, classes = 4;
            auto lv = random_floats(rng, static_cast<std::size_t>(batch * classes), -2.0f, 2.0f);
            std::vector<std::int64_t> labels = {static_cast<std::int64_t>(rng.below(4)),
                                                static_cast<std::int64_t>(rng.below(4))};
            Tape tape;
            auto logits = make_tensor({batch, classes}, lv);
            auto loss = softmax_xent(&tape, logits, labels);
            tape.backward(loss);
            auto f = [&](const dvec& th) {
                return oracle::ref_softmax_xent(th, batch, classes, labels);
            };
            check_grads("softmax logits", logits->grad, oracle::finite_diff(f, to_dvec(lv)));
        }
    }
}

TEST_CASE("gradient check: full layer stack") {
    // conv -> bn -> relu -> maxpool -> flatten -> linear -> softmax.
    Rng rng(505);
    for (int inst = 0; inst < 5; ++inst) {
        const std::int64_t batch = 2, cin = 1, h = 6, w = 6, fout = 2;
        auto xv = random_floats(rng, static_cast<std::size_t>(batch * cin * h * w));
        auto kv = random_floats(rng, static_cast<std::size_t>(fout * cin * 9), -0.5f, 0.5f);
        auto cbv = random_floats(rng, static_cast<std::size_t>(fout), -0.2f, 0.2f);
        auto gv = random_floats(rng, static_cast<std::size_t>(fout), 0.8f, 1.2f);
        auto bnv = random_floats(rng, static_cast<std::size_t>(fout), -0.2f, 0.2f);
        const std::int64_t feat = fout * 3 * 3;
        auto wv = random_floats(rng, static_cast<std::size_t>(3 * feat), -0.3f, 0.3f);
        auto lv = random_floats(rng, 3, -0.1f, 0.1f);
        std::vector<std::int64_t> labels = {0, 2};

        Tape tape;
        auto x = make_tensor({batch, cin, h, w}, xv);
        auto k = make_tensor({fout, cin, 3, 3}, kv);
        auto cb = make_tensor({fout}, cbv);
        auto gain = make_tensor({fout}, gv);
        auto bias = make_tensor({fout}, bnv);
        auto rm = make_tensor({fout});
        auto rv = make_tensor({fout}, std::vector<float>(static_cast<std::size_t>(fout), 1.0f));
        auto wl = make_tensor({3, feat}, wv);
        auto bl = make_tensor({3}, lv);

        auto t = conv2d_forward(&tape, x, k, cb, 1, 1);
        t = batchnorm_forward(&tape, t, gain, bias, rm, rv, BatchNormMode::train, 0.1f, 1e-5f);
        t = relu(&tape, t);
        t = maxpool2x2(&tape, t);
        t = flatten(&tape, t);
        t = linear_forward(&tape, t, wl, bl);
        auto loss = softmax_xent(&tape, t, labels);
        tape.backward(loss);

        auto ref_stack = [&](const dvec& kth) {
            dvec cbd = to_dvec(cbv);
            dvec y = oracle::ref_conv2d(to_dvec(xv), batch, cin, h, w, kth, fout, 3, 3, &cbd, 1, 1);
            y = oracle::ref_batchnorm(y, batch, fout, h * w, to_dvec(gv), to_dvec(bnv), {}, {},
                                      true, 1e-5);
            y = oracle::ref_relu(y);
            y = oracle::ref_maxpool2x2(y, batch, fout, h, w);
            dvec z = oracle::ref_linear(y, batch, feat, to_dvec(wv), 3, nullptr);
            dvec bld = to_dvec(lv);
            for (std::int64_t n = 0; n < batch; ++n)
                for (std::int64_t o = 0; o < 3; ++o)
                    z[static_cast<std::size_t>(n * 3 + o)] += bld[static_cast<std::size_t>(o)];
            return oracle::ref_softmax_xent(z, batch, 3, labels);
        };
        check_grads("stack conv kernel", k->grad, oracle::finite_diff(ref_stack, to_dvec(kv)),
                    2e-5);
    }
}

TEST_CASE("sgd_masked_step examples and invariants") {
    Tensor p({2}, {1.0f, 1.0f});
    std::vector<float> g = {0.5f, 0.5f};

    // All-zero mask leaves the parameter bit-identical.
    auto before = p.data;
    sgd_masked_step(p, g, 0.1f, {0, 0});
    CHECK(std::memcmp(p.data.data(), before.data(), sizeof(float) * 2) == 0);

    // mask [1,0]: only the first entry moves.
    sgd_masked_step(p, g, 0.1f, {1, 0});
    CHECK(p.data[0] == doctest::Approx(0.95f));
    CHECK(p.data[1] == 1.0f);

    // All-one mask, lr=1, grad=param drives to zero.
    Tensor q({3}, {2.0f, -1.0f, 0.5f});
    sgd_masked_step(q, q.data, 1.0f, {1, 1, 1});
    CHECK(q.data == std::vector<float>{0.0f, 0.0f, 0.0f});

    CHECK_THROWS_AS(sgd_masked_step(q, {1.0f}, 0.1f, {1, 1, 1}), Error);
    CHECK_THROWS_AS(sgd_masked_step(q, q.data, 0.1f, {1, 1}), Error);
}

TEST_CASE("masked entries are bit-identical across random updates") {
    Rng rng(606);
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t n = 1 + rng.below(64);
        Tensor p({static_cast<std::int64_t>(n)}, random_floats(rng, n));
        auto g = random_floats(rng, n);
        std::vector<std::uint8_t> mask(n);
        for (auto& m : mask) m = static_cast<std::uint8_t>(rng.below(2));
        auto before = p.data;
        sgd_masked_step(p, g, rng.uniform_f(0.001f, 1.0f), mask);
        for (std::size_t i = 0; i < n; ++i)
            if (!mask[i])
                CHECK(std::memcmp(&p.data[i], &before[i], sizeof(float)) == 0);
    }
}

TEST_CASE("forward evaluation is bitwise deterministic") {
    Rng rng(707);
    auto xv = random_floats(rng, 2 * 3 * 8 * 8);
    auto kv = random_floats(rng, 4 * 3 * 9);
    auto run = [&]() {
        auto x = make_tensor({2, 3, 8, 8}, xv);
        auto k = make_tensor({4, 3, 3, 3}, kv);
        auto y = conv2d_forward(nullptr, x, k, nullptr, 1, 1);
        y = relu(nullptr, y);
        y = maxpool2x2(nullptr, y);
        return flatten(nullptr, y)->data;
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}
