#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "taskpack/network.hpp"
#include "taskpack/pruning.hpp"
#include "taskpack/rng.hpp"

using namespace taskpack;

namespace {

Tensor values_of(std::vector<float> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return Tensor({n}, std::move(v));
}

// Independent oracle: full stable sort on (|value|, index), then take the
// first floor(ratio * eligible) entries.
std::vector<std::int64_t> brute_force_select(const std::vector<float>& values,
                                             const BitMask& eligible, double ratio) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (eligible[i]) idx.push_back(static_cast<std::int64_t>(i));
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return std::fabs(values[static_cast<std::size_t>(a)]) <
               std::fabs(values[static_cast<std::size_t>(b)]);
    });
    const auto k =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size())));
    std::vector<std::int64_t> out(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.begin(), out.end());
    return out;
}

// Small conv net for filter-mode checks: conv(1->4) -> relu -> pool -> flatten.
PackedNetwork make_filter_net(std::uint64_t seed, bool filter_mode = true) {
    std::vector<LayerSpec> backbone = {
        LayerSpec::conv2d(1, 4, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool(),
        LayerSpec::flatten(),
    };
    PackedNetwork::Options opt;
    opt.filter_pruning = filter_mode;
    return PackedNetwork(std::move(backbone), {1, 4, 4}, seed, opt);
}

Dataset random_dataset(Rng& rng, std::int64_t n, std::vector<std::int64_t> input_shape,
                       std::int64_t classes) {
    std::vector<std::int64_t> shape = {n};
    shape.insert(shape.end(), input_shape.begin(), input_shape.end());
    Dataset d;
    d.inputs = make_tensor(shape);
    for (auto& v : d.inputs->data) v = rng.uniform_f(-1.0f, 1.0f);
    d.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : d.labels) l = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
    return d;
}

} // namespace

TEST_CASE("magnitude_select examples") {
    auto v = values_of({0.1f, -0.5f, 0.3f, -0.2f});
    BitMask all(4, 1);
    auto d = magnitude_select(v, all, 0.5);
    CHECK(d.pruned == std::vector<std::int64_t>{0, 3});
    CHECK(d.eligible_count == 4);
    CHECK(d.pruned_count == 2);
    CHECK(d.retained_count == 2);

    CHECK(magnitude_select(v, all, 0.0).pruned.empty());
    CHECK(magnitude_select(v, all, 1.0).pruned == std::vector<std::int64_t>{0, 1, 2, 3});

    // Ties break toward the smaller flat index.
    auto tie = values_of({0.2f, 0.2f, 0.5f, 0.9f});
    CHECK(magnitude_select(tie, all, 0.25).pruned == std::vector<std::int64_t>{0});

    CHECK_THROWS_AS(magnitude_select(v, all, 1.5), Error);
    CHECK_THROWS_AS(magnitude_select(v, BitMask(3, 1), 0.5), Error);
}

TEST_CASE("magnitude_select never touches ineligible indices") {
    auto v = values_of({0.01f, 0.02f, 0.03f, 0.04f});
    BitMask eligible = {0, 1, 0, 1};
    auto d = magnitude_select(v, eligible, 1.0);
    CHECK(d.pruned == std::vector<std::int64_t>{1, 3});
}

TEST_CASE("magnitude_select matches the brute-force oracle") {
    Rng rng(909);
    for (int it = 0; it < 300; ++it) {
        const std::size_t n = 1 + rng.below(200);
        std::vector<float> vals(n);
        // Quantized values provoke plenty of magnitude ties.
        for (auto& x : vals)
            x = static_cast<float>(rng.range(-8, 9)) * 0.125f;
        BitMask eligible(n);
        for (auto& e : eligible) e = static_cast<std::uint8_t>(rng.below(2));
        const double ratio = it % 10 == 0 ? (it % 20 == 0 ? 0.0 : 1.0) : rng.uniform();

        auto got = magnitude_select(values_of(std::vector<float>(vals)), eligible, ratio);
        auto want = brute_force_select(vals, eligible, ratio);
        CHECK(got.pruned == want);

        std::int64_t e_count = 0;
        for (auto e : eligible) e_count += e;
        CHECK(got.pruned_count ==
              static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(e_count))));
        for (auto i : got.pruned) CHECK(eligible[static_cast<std::size_t>(i)] == 1);
    }
}

TEST_CASE("apply_prune zeroes exactly the selected entries") {
    auto v = values_of({1.0f, 2.0f, 3.0f});
    PruneDecision d;
    d.pruned = {1};
    apply_prune(v, d);
    CHECK(v.data == std::vector<float>{1.0f, 0.0f, 3.0f});

    auto before = v.data;
    apply_prune(v, PruneDecision{});
    CHECK(v.data == before);

    // Idempotent.
    apply_prune(v, d);
    CHECK(v.data == std::vector<float>{1.0f, 0.0f, 3.0f});
}

TEST_CASE("post-prune sparsity equals floor(ratio * eligible) / eligible") {
    Rng rng(1010);
    for (int it = 0; it < 50; ++it) {
        const std::size_t n = 16 + rng.below(64);
        std::vector<float> vals(n);
        for (auto& x : vals) x = rng.uniform_f(0.5f, 1.0f); // no pre-existing zeros
        BitMask all(n, 1);
        const double ratio = rng.uniform();
        auto t = values_of(std::vector<float>(vals));
        auto d = magnitude_select(t, all, ratio);
        apply_prune(t, d);
        std::int64_t zeros = 0;
        for (auto x : t.data) zeros += x == 0.0f ? 1 : 0;
        CHECK(zeros == d.pruned_count);
    }
}

TEST_CASE("budget ledger reproduces the capacity arithmetic") {
    auto ledger = simulate_budget(134000000ull, {0.50, 0.75, 0.75});
    REQUIRE(ledger.owned.size() == 3);
    CHECK(ledger.owned[0] == 67000000ull);
    CHECK(ledger.owned[1] == 16750000ull);
    CHECK(ledger.owned[2] == 12562500ull);
    CHECK(ledger.free_entries == 37687500ull);
    CHECK(ledger.total == 134000000ull);

    // After task 1 alone: half free.
    auto first = simulate_budget(134000000ull, {0.50});
    CHECK(first.free_entries == 67000000ull);
}

TEST_CASE("budget_report counts an actual pruned lifecycle") {
    // One linear layer of 1000 weights, pruned through the real lifecycle with
    // zero training epochs; counts must agree with the closed form.
    std::vector<LayerSpec> backbone = {LayerSpec::linear(10, 100)};
    PackedNetwork net(std::move(backbone), {10}, 7);
    TrainSchedule sched;
    sched.epochs = 0;
    sched.retrain_epochs = 0;
    Rng rng(1);
    auto data = random_dataset(rng, 8, {10}, 3);

    const std::vector<double> ratios = {0.5, 0.75};
    for (int t = 1; t <= 2; ++t) {
        net.add_task("t" + std::to_string(t), 3);
        net.train_task(t, data, sched);
        net.prune_task(t, ratios[static_cast<std::size_t>(t - 1)]);
        net.retrain_task(t, data, sched);
    }
    auto got = budget_report(net.ownership());
    auto want = simulate_budget(1000, ratios);
    CHECK(got.owned == want.owned);
    CHECK(got.free_entries == want.free_entries);
    CHECK(got.total == want.total);

    // Empty map: everything free.
    auto empty = budget_report(OwnershipMap(std::vector<std::size_t>{64}));
    CHECK(empty.free_entries == 64);
    CHECK(empty.owned.empty());
}

TEST_CASE("taylor scores: zero filter scores zero, single filter scores one") {
    Rng rng(1111);
    auto net = make_filter_net(42);
    net.add_task("a", 3);
    // Silence filter 2 entirely.
    auto& conv = net.layers()[0];
    for (std::int64_t j = 0; j < 9; ++j) conv.weight->data[static_cast<std::size_t>(2 * 9 + j)] = 0.0f;
    conv.bias->data[2] = 0.0f;

    auto data = random_dataset(rng, 8, {1, 4, 4}, 3);
    Batch batch{data.inputs, data.labels};
    score_batch(net, 1, batch);
    auto scores = taylor_filter_scores(net);
    REQUIRE(scores.size() == 1);
    REQUIRE(scores[0].size() == 4);
    CHECK(scores[0][2] == 0.0f);
    // L2 normalization within the layer.
    double norm = 0.0;
    for (auto s : scores[0]) norm += static_cast<double>(s) * s;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-5));

    // A single-filter layer normalizes to exactly 1.
    std::vector<LayerSpec> single = {LayerSpec::conv2d(1, 1, 3, 1, 1), LayerSpec::flatten()};
    PackedNetwork::Options opt;
    opt.filter_pruning = true;
    PackedNetwork net1(std::move(single), {1, 4, 4}, 42, opt);
    net1.add_task("a", 3);
    score_batch(net1, 1, batch);
    auto s1 = taylor_filter_scores(net1);
    CHECK(s1[0][0] == doctest::Approx(1.0f));
}

TEST_CASE("taylor scores match a 64-bit recomputation from dumped tensors") {
    Rng rng(1212);
    auto net = make_filter_net(43);
    net.add_task("a", 3);
    auto data = random_dataset(rng, 16, {1, 4, 4}, 3);
    score_batch(net, 1, Batch{data.inputs, data.labels});
    auto scores = taylor_filter_scores(net);

    const auto& out = net.score_record().outputs[0];
    const std::int64_t batch = out->dim(0), filters = out->dim(1);
    const std::int64_t spatial = out->numel() / (batch * filters);
    std::vector<double> raw(static_cast<std::size_t>(filters), 0.0);
    for (std::int64_t f = 0; f < filters; ++f) {
        double acc = 0.0;
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t s = 0; s < spatial; ++s) {
                const auto i = static_cast<std::size_t>((b * filters + f) * spatial + s);
                acc += static_cast<double>(out->data[i]) * static_cast<double>(out->grad[i]);
            }
        raw[static_cast<std::size_t>(f)] =
            std::fabs(acc / static_cast<double>(batch * spatial));
    }
    double norm = 0.0;
    for (auto v : raw) norm += v * v;
    norm = std::sqrt(norm);
    for (std::int64_t f = 0; f < filters; ++f) {
        const double want = norm > 0 ? raw[static_cast<std::size_t>(f)] / norm : 0.0;
        CHECK(std::fabs(static_cast<double>(scores[0][static_cast<std::size_t>(f)]) - want) <=
              1e-6 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("taylor scores before any pass is a state error") {
    auto net = make_filter_net(44);
    net.add_task("a", 3);
    try {
        taylor_filter_scores(net);
        FAIL("expected state error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::state);
    }
}

TEST_CASE("filter_prune_step: zero filters pruned leaves the network unchanged") {
    Rng rng(1313);
    auto net = make_filter_net(45);
    net.add_task("a", 3);
    auto data = random_dataset(rng, 8, {1, 4, 4}, 3);
    score_batch(net, 1, Batch{data.inputs, data.labels});
    auto before = net.layers()[0].weight->data;
    auto selected = filter_prune_step(net, 0);
    CHECK(selected.empty());
    CHECK(net.layers()[0].weight->data == before);
}

TEST_CASE("pruned filters produce identically zero channels") {
    Rng rng(1414);
    auto net = make_filter_net(46);
    net.add_task("a", 3);
    auto data = random_dataset(rng, 8, {1, 4, 4}, 3);
    score_batch(net, 1, Batch{data.inputs, data.labels});
    auto selected = filter_prune_step(net, 2);
    REQUIRE(selected.size() == 2);

    auto probe = make_probes({1, 4, 4}, 5, 99);
    auto conv_out =
        conv2d_forward(nullptr, probe, net.layers()[0].weight, net.layers()[0].bias, 1, 1);
    for (const auto& [p, f] : selected) {
        REQUIRE(p == 0);
        for (std::int64_t b = 0; b < 5; ++b)
            for (std::int64_t s = 0; s < 16; ++s)
                CHECK(conv_out->data[static_cast<std::size_t>((b * 4 + f) * 16 + s)] == 0.0f);
    }
}

TEST_CASE("pruning an owned filter raises an ownership violation") {
    auto net = make_filter_net(47);
    net.add_task("a", 3);
    net.filter_owners()[0][1] = 1; // pretend filter 1 is owned by task 1
    try {
        apply_filter_prune(net, {{0, 1}});
        FAIL("expected ownership violation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ownership);
    }
}

TEST_CASE("filter pruning separation: full unmasked equals masked, bitwise") {
    // Task 1 ends sparse; training task 2 on the freed filters must leave the
    // full network's task-1 outputs bit-identical to masked inference.
    Rng rng(1515);
    std::vector<LayerSpec> backbone = {
        LayerSpec::conv2d(1, 6, 3, 1, 1), LayerSpec::batchnorm(6),    LayerSpec::relu(),
        LayerSpec::maxpool(),             LayerSpec::conv2d(6, 8, 3, 1, 1),
        LayerSpec::relu(),                LayerSpec::maxpool(),       LayerSpec::flatten(),
        LayerSpec::linear(32, 16),        LayerSpec::relu(),
    };
    PackedNetwork::Options opt;
    opt.filter_pruning = true;
    PackedNetwork net(std::move(backbone), {1, 8, 8}, 21, opt);

    TrainSchedule sched;
    sched.epochs = 2;
    sched.retrain_epochs = 1;
    sched.batch_size = 16;
    sched.lr = 0.05f;
    sched.retrain_lr = 0.005f;

    auto data1 = random_dataset(rng, 48, {1, 8, 8}, 3);
    auto data2 = random_dataset(rng, 48, {1, 8, 8}, 4);

    net.add_task("first", 3);
    net.train_task(1, data1, sched);
    net.prune_task_filters(1, 0.5, Batch{data1.inputs, data1.labels});
    net.retrain_task(1, data1, sched);

    auto probes = make_probes({1, 8, 8}, 20, 1234);
    auto masked_before = net.snapshot(1, probes);
    auto full_before = net.infer_unmasked(1, probes)->data;
    REQUIRE(masked_before.size() == full_before.size());
    CHECK(std::memcmp(masked_before.data(), full_before.data(),
                      masked_before.size() * sizeof(float)) == 0);

    net.add_task("second", 4);
    net.train_task(2, data2, sched);

    auto masked_after = net.snapshot(1, probes);
    auto full_after = net.infer_unmasked(1, probes)->data;
    CHECK(std::memcmp(masked_after.data(), masked_before.data(),
                      masked_after.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(full_after.data(), masked_after.data(),
                      full_after.size() * sizeof(float)) == 0);

    // And through task 2's own prune/retrain as well.
    net.prune_task_filters(2, 0.5, Batch{data2.inputs, data2.labels});
    net.retrain_task(2, data2, sched);
    auto full_final = net.infer_unmasked(1, probes)->data;
    CHECK(std::memcmp(full_final.data(), masked_before.data(),
                      full_final.size() * sizeof(float)) == 0);
}
