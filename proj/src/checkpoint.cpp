#include "taskpack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace taskpack {

namespace {

constexpr char kMagic[4] = {'P', 'K', 'N', 'T'};

constexpr std::uint8_t kFlagBiasesFrozen = 1u << 0;
constexpr std::uint8_t kFlagBatchnormFrozen = 1u << 1;
constexpr std::uint8_t kFlagSeparateBias = 1u << 2;
constexpr std::uint8_t kFlagFilterPruning = 1u << 3;

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void floats(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
    void raw(const std::vector<std::uint8_t>& v) {
        bytes_.insert(bytes_.end(), v.begin(), v.end());
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) {
        require(remaining() >= n, ErrorCode::format,
                std::string("checkpoint truncated at offset ") + std::to_string(pos_) +
                    " while reading " + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    void floats(std::vector<float>& out, std::size_t n, const char* what) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f32(what);
    }
    std::vector<std::uint8_t> raw(std::size_t n, const char* what) {
        need(n, what);
        std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                    bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void write_layer(Writer& w, const ParamLayer& layer) {
    const LayerSpec& s = layer.spec;
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(s.has_bias ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(s.in));
    w.u32(static_cast<std::uint32_t>(s.out));
    w.u32(static_cast<std::uint32_t>(s.kernel));
    w.u32(static_cast<std::uint32_t>(s.stride));
    w.u32(static_cast<std::uint32_t>(s.pad));
    if (layer.weight) w.floats(layer.weight->data);
    if (layer.bias) w.floats(layer.bias->data);
    if (s.kind == LayerKind::batchnorm) {
        w.floats(layer.gain->data);
        w.floats(layer.bn_bias->data);
        w.floats(layer.running_mean->data);
        w.floats(layer.running_var->data);
    }
}

} // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < size; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> save_bytes(const PackedNetwork& net) {
    Writer w;
    w.u8(static_cast<std::uint8_t>(kMagic[0]));
    w.u8(static_cast<std::uint8_t>(kMagic[1]));
    w.u8(static_cast<std::uint8_t>(kMagic[2]));
    w.u8(static_cast<std::uint8_t>(kMagic[3]));
    w.u16(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(net.layers().size()));
    w.u32(static_cast<std::uint32_t>(net.tasks().size()));
    std::uint8_t flags = 0;
    if (net.biases_frozen()) flags |= kFlagBiasesFrozen;
    if (net.batchnorm_frozen()) flags |= kFlagBatchnormFrozen;
    if (net.separate_bias()) flags |= kFlagSeparateBias;
    if (net.filter_pruning()) flags |= kFlagFilterPruning;
    w.u8(flags);
    w.u64(net.seed());
    w.u8(static_cast<std::uint8_t>(net.input_shape().size()));
    for (auto d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));

    for (const auto& layer : net.layers()) write_layer(w, layer);

    const EncodedMask enc = encode(net.ownership());
    w.u64(enc.total_entries);
    w.u16(static_cast<std::uint16_t>(enc.state_count));
    w.raw(enc.states);
    w.u8(static_cast<std::uint8_t>(enc.bits_per_entry));
    w.u64(enc.bytes.size());
    w.raw(enc.bytes);

    for (const auto& rec : net.tasks()) {
        w.str(rec.name);
        w.u32(static_cast<std::uint32_t>(rec.class_count));
        w.u8(static_cast<std::uint8_t>(rec.state));
        w.f32(rec.ratio_used);
        w.floats(rec.head_weight->data);
        w.floats(rec.head_bias->data);
        if (net.separate_bias())
            for (const auto& b : rec.private_biases) w.floats(b->data);
    }

    auto bytes = w.take();
    const std::uint32_t checksum = crc32(bytes.data(), bytes.size());
    Writer tail;
    tail.u32(checksum);
    auto t = tail.take();
    bytes.insert(bytes.end(), t.begin(), t.end());
    return bytes;
}

std::unique_ptr<PackedNetwork> load_bytes(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 4, ErrorCode::format,
            "checkpoint truncated at offset 0 while reading magic");
    const std::uint32_t stored_crc =
        static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
        static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    require(crc32(bytes.data(), bytes.size() - 4) == stored_crc, ErrorCode::format,
            "checkpoint checksum mismatch at offset " + std::to_string(bytes.size() - 4));

    Reader r(bytes);
    for (char expected : kMagic) {
        const std::size_t at = r.offset();
        require(r.u8("magic") == static_cast<std::uint8_t>(expected), ErrorCode::format,
                "bad magic byte at offset " + std::to_string(at));
    }
    const std::uint16_t version = r.u16("version");
    require(version == kCheckpointVersion, ErrorCode::format,
            "unsupported checkpoint version " + std::to_string(version) + " at offset 4");
    const std::uint32_t layer_count = r.u32("layer count");
    const std::uint32_t task_count = r.u32("task count");
    const std::uint8_t flags = r.u8("flags");
    const std::uint64_t seed = r.u64("seed");
    const std::uint8_t ndim = r.u8("input rank");
    std::vector<std::int64_t> input_shape(ndim);
    for (auto& d : input_shape) d = r.u32("input shape");

    std::vector<LayerSpec> backbone;
    struct LayerPayload {
        std::vector<float> weight, bias, gain, bn_bias, mean, var;
    };
    std::vector<LayerPayload> payloads;
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const std::size_t at = r.offset();
        LayerSpec s;
        const std::uint8_t kind = r.u8("layer kind");
        require(kind <= static_cast<std::uint8_t>(LayerKind::flatten), ErrorCode::format,
                "unknown layer kind " + std::to_string(kind) + " at offset " +
                    std::to_string(at));
        s.kind = static_cast<LayerKind>(kind);
        s.has_bias = r.u8("has_bias") != 0;
        s.in = r.u32("layer in");
        s.out = r.u32("layer out");
        s.kernel = static_cast<int>(r.u32("layer kernel"));
        s.stride = static_cast<int>(r.u32("layer stride"));
        s.pad = static_cast<int>(r.u32("layer pad"));

        LayerPayload p;
        if (s.prunable()) {
            r.floats(p.weight, static_cast<std::size_t>(s.weight_count()), "weights");
            if (s.has_bias) r.floats(p.bias, static_cast<std::size_t>(s.out), "bias");
        } else if (s.kind == LayerKind::batchnorm) {
            r.floats(p.gain, static_cast<std::size_t>(s.in), "bn gain");
            r.floats(p.bn_bias, static_cast<std::size_t>(s.in), "bn bias");
            r.floats(p.mean, static_cast<std::size_t>(s.in), "bn running mean");
            r.floats(p.var, static_cast<std::size_t>(s.in), "bn running var");
        }
        backbone.push_back(s);
        payloads.push_back(std::move(p));
    }

    PackedNetwork::Options opt;
    opt.separate_bias = (flags & kFlagSeparateBias) != 0;
    opt.filter_pruning = (flags & kFlagFilterPruning) != 0;
    auto net = std::make_unique<PackedNetwork>(backbone, input_shape, seed, opt);
    require(net->layers().size() == layer_count, ErrorCode::format,
            "layer count mismatch after reconstruction");

    for (std::size_t i = 0; i < net->layers().size(); ++i) {
        auto& layer = net->layers()[i];
        auto& p = payloads[i];
        if (layer.weight) layer.weight->data = std::move(p.weight);
        if (layer.bias) layer.bias->data = std::move(p.bias);
        if (layer.spec.kind == LayerKind::batchnorm) {
            layer.gain->data = std::move(p.gain);
            layer.bn_bias->data = std::move(p.bn_bias);
            layer.running_mean->data = std::move(p.mean);
            layer.running_var->data = std::move(p.var);
        }
    }

    // Ownership stream.
    EncodedMask enc;
    enc.total_entries = r.u64("ownership entry count");
    enc.state_count = r.u16("ownership state count");
    enc.states = r.raw(enc.state_count, "ownership palette");
    enc.bits_per_entry = r.u8("ownership bits per entry");
    const std::uint64_t stream_len = r.u64("ownership stream length");
    enc.bytes = r.raw(stream_len, "ownership stream");
    for (auto pi : net->prunable_layers())
        enc.layer_entry_counts.push_back(
            static_cast<std::uint64_t>(net->layers()[pi].spec.weight_count()));
    net->ownership() = decode(enc);
    require(net->ownership().layer_count() == net->prunable_layers().size(), ErrorCode::format,
            "ownership layer count mismatch");

    // Task table.
    for (std::uint32_t ti = 0; ti < task_count; ++ti) {
        TaskRecord rec;
        rec.id = static_cast<TaskId>(ti + 1);
        rec.name = r.str("task name");
        rec.class_count = r.u32("task class count");
        const std::uint8_t state = r.u8("task state");
        require(state <= static_cast<std::uint8_t>(TaskState::frozen), ErrorCode::format,
                "unknown task state " + std::to_string(state));
        rec.state = static_cast<TaskState>(state);
        rec.ratio_used = r.f32("task ratio");
        rec.head_weight = make_tensor({rec.class_count, net->feature_dim()});
        r.floats(rec.head_weight->data,
                 static_cast<std::size_t>(rec.class_count * net->feature_dim()), "head weights");
        rec.head_bias = make_tensor({rec.class_count});
        r.floats(rec.head_bias->data, static_cast<std::size_t>(rec.class_count), "head bias");
        if (opt.separate_bias) {
            for (auto slot : net->bias_slots()) {
                const auto n = static_cast<std::size_t>(net->layers()[slot].spec.out);
                auto b = make_tensor({static_cast<std::int64_t>(n)});
                r.floats(b->data, n, "private bias");
                rec.private_biases.push_back(std::move(b));
            }
        }
        net->tasks().push_back(std::move(rec));
    }
    require(net->ownership().task_count() >= 0, ErrorCode::format, "ownership state invalid");
    while (net->ownership().task_count() < static_cast<TaskId>(task_count))
        net->ownership().register_task();

    net->set_frozen_flags((flags & kFlagBiasesFrozen) != 0, (flags & kFlagBatchnormFrozen) != 0);

    // Filter ownership is recoverable from weight owners: a committed filter's
    // weights all carry its owner, a free filter's weights are all free.
    if (opt.filter_pruning) {
        for (std::size_t p = 0; p < net->prunable_layers().size(); ++p) {
            const auto& layer = net->layers()[net->prunable_layers()[p]];
            const auto& owners = net->ownership().layer(p);
            const std::int64_t per_out = layer.spec.weight_count() / layer.spec.out;
            for (std::int64_t f = 0; f < layer.spec.out; ++f) {
                const std::uint8_t first = owners[static_cast<std::size_t>(f * per_out)];
                for (std::int64_t j = 1; j < per_out; ++j)
                    require(owners[static_cast<std::size_t>(f * per_out + j)] == first,
                            ErrorCode::format,
                            "filter-pruned checkpoint has mixed ownership inside filter " +
                                std::to_string(f) + " of layer " + layer.name);
                net->filter_owners()[p][static_cast<std::size_t>(f)] = first;
            }
        }
    }

    require(r.remaining() == 4, ErrorCode::format,
            "checkpoint has " + std::to_string(r.remaining() - 4) +
                " unexpected trailing bytes at offset " + std::to_string(r.offset()));
    return net;
}

void save(const PackedNetwork& net, const std::string& path) {
    auto bytes = save_bytes(net);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::io, "save: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::io, "save: write to '" + path + "' failed");
}

std::unique_ptr<PackedNetwork> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::io, "load: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return load_bytes(bytes);
}

void export_task(const PackedNetwork& net, TaskId t, const std::string& path) {
    const TaskRecord& rec = net.task(t); // lookup error on unknown task

    PackedNetwork::Options opt; // dense view: shared biases, weight masking
    PackedNetwork dense(net.backbone(), net.input_shape(), net.seed(), opt);

    const auto masks = inference_mask(net.ownership(), t);
    for (std::size_t p = 0; p < net.prunable_layers().size(); ++p) {
        const auto& src = net.layers()[net.prunable_layers()[p]];
        auto& dst = dense.layers()[dense.prunable_layers()[p]];
        for (std::size_t i = 0; i < src.weight->data.size(); ++i)
            dst.weight->data[i] = masks[p][i] ? src.weight->data[i] : 0.0f;
        auto& owners = dense.ownership().raw()[p];
        for (std::size_t i = 0; i < owners.size(); ++i) owners[i] = masks[p][i] ? 1 : 0;
    }
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const auto& src = net.layers()[i];
        auto& dst = dense.layers()[i];
        if (src.bias) {
            dst.bias->data = net.separate_bias()
                                 ? rec.private_biases[static_cast<std::size_t>(src.bias_slot)]->data
                                 : src.bias->data;
        }
        if (src.spec.kind == LayerKind::batchnorm) {
            dst.gain->data = src.gain->data;
            dst.bn_bias->data = src.bn_bias->data;
            dst.running_mean->data = src.running_mean->data;
            dst.running_var->data = src.running_var->data;
        }
    }

    while (dense.ownership().task_count() < 1) dense.ownership().register_task();
    TaskRecord exported;
    exported.id = 1;
    exported.name = rec.name;
    exported.class_count = rec.class_count;
    exported.state = TaskState::frozen;
    exported.ratio_used = rec.ratio_used;
    exported.head_weight = make_tensor(rec.head_weight->shape, rec.head_weight->data);
    exported.head_bias = make_tensor(rec.head_bias->shape, rec.head_bias->data);
    dense.tasks().push_back(std::move(exported));
    dense.set_frozen_flags(true, true);

    save(dense, path);
}

} // namespace taskpack
