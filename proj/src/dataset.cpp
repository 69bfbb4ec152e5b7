#include "taskpack/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "taskpack/rng.hpp"

namespace taskpack {

namespace {

constexpr std::uint64_t kTrainStream = 0x545241494E; // "TRAIN"
constexpr std::uint64_t kEvalStream = 0x4556414C;    // "EVAL"
constexpr std::uint64_t kPermStream = 0x5045524D;    // "PERM"
constexpr double kPi = 3.14159265358979323846;

void validate(const TaskDatasetSpec& spec) {
    require(spec.class_count >= 2, ErrorCode::input,
            "generate_dataset: class count must be >= 2, got " +
                std::to_string(spec.class_count));
    require(spec.train_samples >= 1 && spec.eval_samples >= 1, ErrorCode::input,
            "generate_dataset: sample counts must be >= 1");
    require(spec.input_shape.size() == 3 && spec.input_shape[0] == 1, ErrorCode::input,
            "generate_dataset: input shape must be [1,H,W]");
    require(spec.input_shape[1] >= 4 && spec.input_shape[2] >= 4, ErrorCode::input,
            "generate_dataset: spatial size must be at least 4x4");
    require(spec.noise >= 0.0, ErrorCode::input, "generate_dataset: noise must be >= 0");
}

// Class-balanced label list (within one sample), shuffled.
std::vector<std::int64_t> balanced_labels(Rng& rng, std::int64_t n, std::int64_t classes) {
    std::vector<std::int64_t> labels;
    labels.reserve(static_cast<std::size_t>(n));
    const std::int64_t base = n / classes;
    const std::int64_t extra = n % classes;
    for (std::int64_t k = 0; k < classes; ++k)
        for (std::int64_t i = 0; i < base + (k < extra ? 1 : 0); ++i) labels.push_back(k);
    rng.shuffle(labels);
    return labels;
}

void render_grating(Rng& rng, float* px, std::int64_t h, std::int64_t w, std::int64_t k,
                    std::int64_t classes, std::int64_t variation, double noise) {
    // Disjoint orientation thirds per task; classes subdivide the band.
    const double band_width = kPi / 3.0;
    const double band_start = static_cast<double>(((variation % 3) + 3) % 3) * band_width;
    const double slot = band_width / static_cast<double>(classes);
    const double jitter = (rng.uniform() - 0.5) * 0.3 * slot;
    const double theta = band_start + (static_cast<double>(k) + 0.5) * slot + jitter;
    const double freq = 2.0 + 0.6 * rng.uniform();
    const double phase = rng.uniform() * (kPi / 2.0);
    const double cx = std::cos(theta), sx = std::sin(theta);
    for (std::int64_t i = 0; i < h; ++i) {
        const double dy = (static_cast<double>(i) - static_cast<double>(h - 1) / 2.0) /
                          static_cast<double>(h);
        for (std::int64_t j = 0; j < w; ++j) {
            const double dx = (static_cast<double>(j) - static_cast<double>(w - 1) / 2.0) /
                              static_cast<double>(w);
            double v = std::sin(2.0 * kPi * freq * (dx * cx + dy * sx) + phase);
            if (noise > 0.0) v += noise * rng.normal();
            px[i * w + j] = static_cast<float>(v);
        }
    }
}

void render_blob(Rng& rng, float* px, std::int64_t h, std::int64_t w, std::int64_t k,
                 std::int64_t classes, std::int64_t variation, double noise) {
    // Class centers on a ring; the variation rotates the ring.
    const double angle = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(classes) +
                         0.7 * static_cast<double>(variation);
    const double r = 0.30 * static_cast<double>(std::min(h, w));
    const double jx = (rng.uniform() - 0.5) * 0.08 * static_cast<double>(w);
    const double jy = (rng.uniform() - 0.5) * 0.08 * static_cast<double>(h);
    const double cx = static_cast<double>(w - 1) / 2.0 + r * std::cos(angle) + jx;
    const double cy = static_cast<double>(h - 1) / 2.0 + r * std::sin(angle) + jy;
    const double sigma = 0.16 * static_cast<double>(std::min(h, w));
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const double dx = static_cast<double>(j) - cx;
            const double dy = static_cast<double>(i) - cy;
            double v = 1.5 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) - 0.3;
            if (noise > 0.0) v += noise * rng.normal();
            px[i * w + j] = static_cast<float>(v);
        }
}

Dataset generate_split(const TaskDatasetSpec& spec, std::int64_t n, std::uint64_t stream) {
    const std::int64_t h = spec.input_shape[1], w = spec.input_shape[2];
    Rng rng(mix_seed(spec.seed, stream));

    Dataset d;
    d.labels = balanced_labels(rng, n, spec.class_count);
    d.inputs = make_tensor({n, 1, h, w});

    const bool permuted = spec.kind == GeneratorKind::permuted_base;
    for (std::int64_t s = 0; s < n; ++s) {
        float* px = d.inputs->data.data() + s * h * w;
        const std::int64_t k = d.labels[static_cast<std::size_t>(s)];
        switch (spec.kind) {
            case GeneratorKind::gratings:
                render_grating(rng, px, h, w, k, spec.class_count, spec.variation, spec.noise);
                break;
            case GeneratorKind::gaussian_blobs:
                render_blob(rng, px, h, w, k, spec.class_count, spec.variation, spec.noise);
                break;
            case GeneratorKind::permuted_base:
                // Base task: gratings at variation 0, identical stream usage.
                render_grating(rng, px, h, w, k, spec.class_count, 0, spec.noise);
                break;
        }
    }

    if (permuted && spec.variation != 0) {
        std::vector<std::int64_t> perm(static_cast<std::size_t>(h * w));
        for (std::int64_t i = 0; i < h * w; ++i) perm[static_cast<std::size_t>(i)] = i;
        Rng prng(mix_seed(static_cast<std::uint64_t>(spec.variation), kPermStream));
        prng.shuffle(perm);
        std::vector<float> scratch(static_cast<std::size_t>(h * w));
        for (std::int64_t s = 0; s < n; ++s) {
            float* px = d.inputs->data.data() + s * h * w;
            for (std::int64_t i = 0; i < h * w; ++i)
                scratch[static_cast<std::size_t>(i)] =
                    px[perm[static_cast<std::size_t>(i)]];
            std::copy(scratch.begin(), scratch.end(), px);
        }
    }
    return d;
}

} // namespace

SplitDataset generate_dataset(const TaskDatasetSpec& spec) {
    validate(spec);
    SplitDataset out;
    out.train = generate_split(spec, spec.train_samples, kTrainStream);
    out.eval = generate_split(spec, spec.eval_samples, kEvalStream);
    return out;
}

const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::gratings: return "gratings";
        case GeneratorKind::gaussian_blobs: return "gaussian_blobs";
        case GeneratorKind::permuted_base: return "permuted_base";
    }
    return "?";
}

GeneratorKind generator_kind_from_name(const std::string& name) {
    if (name == "gratings") return GeneratorKind::gratings;
    if (name == "gaussian_blobs") return GeneratorKind::gaussian_blobs;
    if (name == "permuted_base") return GeneratorKind::permuted_base;
    raise(ErrorCode::input, "unknown dataset generator '" + name + "'");
}

} // namespace taskpack
