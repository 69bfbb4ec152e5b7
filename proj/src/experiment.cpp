#include "taskpack/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "taskpack/pruning.hpp"
#include "taskpack/rng.hpp"

namespace taskpack {

using nlohmann::json;

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    for (int i = 0; i < 3; ++i) {
        TaskDatasetSpec t;
        t.name = "gratings" + std::to_string(i);
        t.kind = GeneratorKind::gratings;
        t.class_count = 5;
        t.train_samples = 2000;
        t.eval_samples = 1000;
        t.input_shape = cfg.input_shape;
        t.variation = i;
        t.seed = 100 + static_cast<std::uint64_t>(i);
        cfg.tasks.push_back(std::move(t));
    }
    return cfg;
}

std::vector<LayerSpec> build_backbone(const ExperimentConfig& config) {
    require(config.input_shape.size() == 3, ErrorCode::input,
            "backbone: input shape must be [C,H,W]");
    require(!config.conv_channels.empty(), ErrorCode::input,
            "backbone: at least one conv block required");
    std::vector<LayerSpec> layers;
    std::int64_t ch = config.input_shape[0];
    const int pad = config.kernel / 2;
    for (auto out : config.conv_channels) {
        layers.push_back(LayerSpec::conv2d(ch, out, config.kernel, 1, pad));
        if (config.batchnorm) layers.push_back(LayerSpec::batchnorm(out));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::maxpool());
        ch = out;
    }
    layers.push_back(LayerSpec::flatten());
    const std::int64_t down = 1ll << config.conv_channels.size();
    const std::int64_t feat =
        ch * (config.input_shape[1] / down) * (config.input_shape[2] / down);
    layers.push_back(LayerSpec::linear(feat, config.fc_dim));
    layers.push_back(LayerSpec::relu());
    return layers;
}

namespace {

std::string ordering_string(const std::vector<std::size_t>& ordering) {
    std::string s;
    for (std::size_t i = 0; i < ordering.size(); ++i) {
        if (i) s += '-';
        s += std::to_string(ordering[i]);
    }
    return s;
}

std::vector<std::size_t> effective_ordering(const ExperimentConfig& config) {
    std::vector<std::size_t> ordering = config.ordering;
    if (ordering.empty()) {
        ordering.resize(config.tasks.size());
        std::iota(ordering.begin(), ordering.end(), 0);
    }
    require(ordering.size() == config.tasks.size(), ErrorCode::input,
            "config: ordering length must equal task count");
    std::set<std::size_t> seen(ordering.begin(), ordering.end());
    require(seen.size() == ordering.size() &&
                (ordering.empty() || *seen.rbegin() == ordering.size() - 1),
            ErrorCode::input, "config: ordering must be a permutation of task indices");
    return ordering;
}

std::uint64_t extra_bias_bytes_per_task(const PackedNetwork& net) {
    if (!net.separate_bias()) return 0;
    std::uint64_t n = 0;
    for (auto slot : net.bias_slots())
        n += net.layers()[slot].bias->data.size() * sizeof(float);
    return n;
}

Batch first_batch(const Dataset& data, std::int64_t batch_size) {
    const std::int64_t n = std::min<std::int64_t>(batch_size, data.size());
    std::vector<std::int64_t> shape = data.inputs->shape;
    shape[0] = n;
    Batch b;
    b.input = make_tensor(shape);
    const std::int64_t sample_len = data.inputs->numel() / data.size();
    std::copy_n(data.inputs->data.begin(), n * sample_len, b.input->data.begin());
    b.labels.assign(data.labels.begin(), data.labels.begin() + n);
    return b;
}

} // namespace

SequenceResult run_sequence(const ExperimentConfig& config) {
    require(!config.tasks.empty(), ErrorCode::input, "run_sequence: no tasks configured");
    const auto ordering = effective_ordering(config);
    require(config.ratios.size() == config.tasks.size(), ErrorCode::input,
            "run_sequence: ratio list length must equal task count");

    PackedNetwork::Options opt;
    opt.separate_bias = config.separate_bias;
    opt.filter_pruning = config.filter_pruning;
    auto net = std::make_unique<PackedNetwork>(build_backbone(config), config.input_shape,
                                               config.seed, opt);

    std::vector<SplitDataset> splits;
    splits.reserve(config.tasks.size());
    for (auto spec : config.tasks) {
        spec.input_shape = config.input_shape;
        splits.push_back(generate_dataset(spec));
    }
    auto probes = make_probes(config.input_shape, config.probe_count, config.seed);

    TrainSchedule schedule = config.schedule;
    schedule.trainable_layers = config.trainable_layers;

    const std::string ord_str = ordering_string(ordering);
    std::vector<MetricsRow> rows;
    std::vector<std::vector<float>> frozen_snaps;
    std::vector<TaskId> frozen_ids;

    for (std::size_t pos = 0; pos < ordering.size(); ++pos) {
        const auto& spec = config.tasks[ordering[pos]];
        const auto& split = splits[ordering[pos]];
        const double ratio = config.ratios[pos];
        const auto t0 = std::chrono::steady_clock::now();

        const TaskId t = net->add_task(spec.name, spec.class_count);
        net->train_task(t, split.train, schedule);
        MetricsRow row;
        row.task = spec.name;
        row.position = static_cast<int>(pos) + 1;
        row.ratio = ratio;
        row.run_seed = config.seed;
        row.run_ordering = ord_str;
        row.preprune_error = evaluate_error(*net, t, split.eval);

        if (config.filter_pruning)
            net->prune_task_filters(t, ratio, first_batch(split.train, schedule.batch_size));
        else
            net->prune_task(t, ratio);
        row.postprune_error = evaluate_error(*net, t, split.eval);

        net->retrain_task(t, split.train, schedule);
        row.postretrain_error = evaluate_error(*net, t, split.eval);

        // Zero-forgetting enforcement over every previously frozen task.
        for (std::size_t i = 0; i < frozen_ids.size(); ++i) {
            auto now = net->snapshot(frozen_ids[i], probes);
            if (now != frozen_snaps[i]) {
                raise(ErrorCode::invariant,
                      "zero-forgetting violated: task " + std::to_string(frozen_ids[i]) +
                          " snapshot changed after adding task " + std::to_string(t));
            }
        }
        frozen_ids.push_back(t);
        frozen_snaps.push_back(net->snapshot(t, probes));

        const auto& map = net->ownership();
        row.owned_params = map.owned_count(t);
        row.free_params = map.free_count();
        row.overhead_bytes = overhead_bytes(map.total_entries(), map.state_count());
        row.extra_bias_bytes = extra_bias_bytes_per_task(*net);
        row.zero_forgetting_ok = true;
        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(std::move(row));
    }

    // Final errors over the finished network; zero forgetting makes these
    // match the post-retrain values, but measure rather than assume.
    for (std::size_t pos = 0; pos < ordering.size(); ++pos) {
        rows[pos].final_top1_error =
            evaluate_error(*net, static_cast<TaskId>(pos + 1), splits[ordering[pos]].eval);
    }

    SequenceResult result;
    result.rows = std::move(rows);
    result.net = std::move(net);
    return result;
}

std::vector<std::vector<std::size_t>> all_orderings(std::size_t n) {
    std::vector<std::size_t> base(n);
    std::iota(base.begin(), base.end(), 0);
    std::vector<std::vector<std::size_t>> out;
    do {
        out.push_back(base);
    } while (std::next_permutation(base.begin(), base.end()));
    return out;
}

OrderingStudy run_ordering_study(const ExperimentConfig& config,
                                 const std::vector<std::uint64_t>& seeds) {
    require(!seeds.empty(), ErrorCode::input, "run_ordering_study: need at least one seed");
    OrderingStudy study;
    for (const auto& t : config.tasks) study.task_names.push_back(t.name);
    const std::size_t n = config.tasks.size();

    std::vector<std::vector<double>> sums(n, std::vector<double>(n, 0.0));
    std::vector<std::vector<std::int64_t>> counts(n, std::vector<std::int64_t>(n, 0));

    for (const auto& ordering : all_orderings(n)) {
        for (auto seed : seeds) {
            ExperimentConfig cfg = config;
            cfg.ordering = ordering;
            cfg.seed = seed;
            auto result = run_sequence(cfg);
            for (std::size_t pos = 0; pos < n; ++pos) {
                const std::size_t task_idx = ordering[pos];
                sums[task_idx][pos] += result.rows[pos].final_top1_error;
                ++counts[task_idx][pos];
            }
            study.rows.insert(study.rows.end(), result.rows.begin(), result.rows.end());
        }
    }

    study.mean_task_position.assign(n, std::vector<double>(n, 0.0));
    study.mean_error_by_position.assign(n, 0.0);
    std::vector<double> pos_sum(n, 0.0);
    std::vector<std::int64_t> pos_count(n, 0);
    for (std::size_t task = 0; task < n; ++task)
        for (std::size_t pos = 0; pos < n; ++pos) {
            study.mean_task_position[task][pos] =
                counts[task][pos] ? sums[task][pos] / static_cast<double>(counts[task][pos])
                                  : std::nan("");
            pos_sum[pos] += sums[task][pos];
            pos_count[pos] += counts[task][pos];
        }
    for (std::size_t pos = 0; pos < n; ++pos)
        study.mean_error_by_position[pos] =
            pos_count[pos] ? pos_sum[pos] / static_cast<double>(pos_count[pos]) : std::nan("");
    return study;
}

RatioStudy run_ratio_study(const ExperimentConfig& config, const std::vector<double>& ratios,
                           const std::vector<std::uint64_t>& seeds) {
    require(!ratios.empty(), ErrorCode::input, "run_ratio_study: need at least one ratio");
    require(!seeds.empty(), ErrorCode::input, "run_ratio_study: need at least one seed");
    RatioStudy study;
    study.ratios = ratios;
    for (double ratio : ratios) {
        double sum_pre = 0.0, sum_post = 0.0, sum_re = 0.0;
        for (auto seed : seeds) {
            ExperimentConfig cfg = config;
            cfg.seed = seed;
            cfg.ratios.assign(config.tasks.size(), ratio);
            auto result = run_sequence(cfg);
            const auto& last = result.rows.back();
            RatioStudy::Entry e;
            e.ratio = ratio;
            e.seed = seed;
            e.preprune = last.preprune_error;
            e.postprune = last.postprune_error;
            e.postretrain = last.postretrain_error;
            sum_pre += e.preprune;
            sum_post += e.postprune;
            sum_re += e.postretrain;
            study.entries.push_back(e);
            study.rows.insert(study.rows.end(), result.rows.begin(), result.rows.end());
        }
        const auto k = static_cast<double>(seeds.size());
        study.mean_preprune.push_back(sum_pre / k);
        study.mean_postprune.push_back(sum_post / k);
        study.mean_postretrain.push_back(sum_re / k);
    }
    return study;
}

LayerAblation run_layer_ablation(const ExperimentConfig& config,
                                 const std::vector<std::vector<std::string>>& layer_sets,
                                 const std::vector<std::uint64_t>& seeds) {
    require(config.tasks.size() >= 2, ErrorCode::input,
            "run_layer_ablation: config needs a base task and a probe task");
    require(!layer_sets.empty() && !seeds.empty(), ErrorCode::input,
            "run_layer_ablation: need at least one layer set and one seed");

    LayerAblation study;
    for (const auto& set : layer_sets) {
        std::string name = set.empty() ? "classifier_only" : "";
        for (std::size_t i = 0; i < set.size(); ++i) name += (i ? "+" : "") + set[i];
        study.set_names.push_back(name);
    }

    const auto ordering = effective_ordering(config);
    for (std::size_t si = 0; si < layer_sets.size(); ++si) {
        double sum = 0.0;
        for (auto seed : seeds) {
            ExperimentConfig cfg = config;
            cfg.seed = seed;

            PackedNetwork::Options opt;
            opt.separate_bias = cfg.separate_bias;
            opt.filter_pruning = cfg.filter_pruning;
            PackedNetwork net(build_backbone(cfg), cfg.input_shape, cfg.seed, opt);

            auto base_spec = cfg.tasks[ordering[0]];
            base_spec.input_shape = cfg.input_shape;
            auto base = generate_dataset(base_spec);
            const TaskId t1 = net.add_task(base_spec.name, base_spec.class_count);
            net.train_task(t1, base.train, cfg.schedule);
            if (cfg.filter_pruning)
                net.prune_task_filters(t1, cfg.ratios[0],
                                       first_batch(base.train, cfg.schedule.batch_size));
            else
                net.prune_task(t1, cfg.ratios[0]);
            net.retrain_task(t1, base.train, cfg.schedule);

            auto probe_spec = cfg.tasks[ordering[1]];
            probe_spec.input_shape = cfg.input_shape;
            auto probe = generate_dataset(probe_spec);
            const TaskId t2 = net.add_task(probe_spec.name, probe_spec.class_count);
            TrainSchedule sched = cfg.schedule;
            sched.trainable_layers = layer_sets[si];
            net.train_task(t2, probe.train, sched);

            LayerAblation::Entry e;
            e.set_name = study.set_names[si];
            e.seed = seed;
            e.error = evaluate_error(net, t2, probe.eval);
            sum += e.error;
            study.entries.push_back(std::move(e));
        }
        study.mean_error.push_back(sum / static_cast<double>(seeds.size()));
    }
    return study;
}

BiasAblation run_bias_ablation(const ExperimentConfig& config,
                               const std::vector<std::uint64_t>& seeds) {
    require(!seeds.empty(), ErrorCode::input, "run_bias_ablation: need at least one seed");
    BiasAblation study;
    double gap_sum = 0.0;
    std::size_t gap_count = 0;
    for (auto seed : seeds) {
        ExperimentConfig shared_cfg = config;
        shared_cfg.seed = seed;
        shared_cfg.separate_bias = false;
        ExperimentConfig separate_cfg = shared_cfg;
        separate_cfg.separate_bias = true;

        auto shared = run_sequence(shared_cfg);
        auto separate = run_sequence(separate_cfg);
        study.separate_extra_bias_bytes = separate.rows.back().extra_bias_bytes;

        for (std::size_t i = 0; i < shared.rows.size(); ++i) {
            BiasAblation::Entry e;
            e.task = shared.rows[i].task;
            e.position = shared.rows[i].position;
            e.seed = seed;
            e.shared_error = shared.rows[i].final_top1_error;
            e.separate_error = separate.rows[i].final_top1_error;
            gap_sum += std::abs(e.shared_error - e.separate_error);
            ++gap_count;
            study.entries.push_back(std::move(e));
        }
    }
    study.mean_abs_gap = gap_count ? gap_sum / static_cast<double>(gap_count) : 0.0;
    return study;
}

// ---------------------------------------------------------------------------
// JSON bindings

namespace {

TaskDatasetSpec dataset_spec_from(const json& j) {
    TaskDatasetSpec spec;
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("kind")) spec.kind = generator_kind_from_name(j.at("kind").get<std::string>());
    if (j.contains("classes")) spec.class_count = j.at("classes").get<std::int64_t>();
    if (j.contains("train_samples")) spec.train_samples = j.at("train_samples").get<std::int64_t>();
    if (j.contains("eval_samples")) spec.eval_samples = j.at("eval_samples").get<std::int64_t>();
    if (j.contains("input_shape"))
        spec.input_shape = j.at("input_shape").get<std::vector<std::int64_t>>();
    if (j.contains("variation")) spec.variation = j.at("variation").get<std::int64_t>();
    if (j.contains("noise")) spec.noise = j.at("noise").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

TrainSchedule schedule_from(const json& j) {
    TrainSchedule s;
    if (j.contains("epochs")) s.epochs = j.at("epochs").get<int>();
    if (j.contains("lr")) s.lr = j.at("lr").get<float>();
    if (j.contains("decay_factor")) s.decay_factor = j.at("decay_factor").get<float>();
    if (j.contains("decay_epoch")) s.decay_epoch = j.at("decay_epoch").get<int>();
    if (j.contains("retrain_epochs")) s.retrain_epochs = j.at("retrain_epochs").get<int>();
    if (j.contains("retrain_lr")) s.retrain_lr = j.at("retrain_lr").get<float>();
    if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
    if (j.contains("trainable_layers") && !j.at("trainable_layers").is_null())
        s.trainable_layers = j.at("trainable_layers").get<std::vector<std::string>>();
    return s;
}

json parse_json(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    require(!j.is_discarded(), ErrorCode::input, std::string(what) + ": malformed JSON");
    return j;
}

} // namespace

TaskDatasetSpec dataset_spec_from_json(const std::string& json_text) {
    return dataset_spec_from(parse_json(json_text, "dataset spec"));
}

TrainSchedule schedule_from_json(const std::string& json_text) {
    return schedule_from(parse_json(json_text, "schedule"));
}

ExperimentConfig config_from_json(const std::string& json_text) {
    json j = parse_json(json_text, "experiment config");
    ExperimentConfig cfg = default_config();
    if (j.contains("input_shape"))
        cfg.input_shape = j.at("input_shape").get<std::vector<std::int64_t>>();
    if (j.contains("conv_channels"))
        cfg.conv_channels = j.at("conv_channels").get<std::vector<std::int64_t>>();
    if (j.contains("fc_dim")) cfg.fc_dim = j.at("fc_dim").get<std::int64_t>();
    if (j.contains("kernel")) cfg.kernel = j.at("kernel").get<int>();
    if (j.contains("batchnorm")) cfg.batchnorm = j.at("batchnorm").get<bool>();
    if (j.contains("tasks")) {
        cfg.tasks.clear();
        for (const auto& tj : j.at("tasks")) cfg.tasks.push_back(dataset_spec_from(tj));
    }
    if (j.contains("ordering")) cfg.ordering = j.at("ordering").get<std::vector<std::size_t>>();
    if (j.contains("ratios")) cfg.ratios = j.at("ratios").get<std::vector<double>>();
    if (j.contains("schedule")) cfg.schedule = schedule_from(j.at("schedule"));
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("probe_count")) cfg.probe_count = j.at("probe_count").get<std::int64_t>();
    if (j.contains("separate_bias")) cfg.separate_bias = j.at("separate_bias").get<bool>();
    if (j.contains("filter_pruning")) cfg.filter_pruning = j.at("filter_pruning").get<bool>();
    if (j.contains("trainable_layers") && !j.at("trainable_layers").is_null())
        cfg.trainable_layers = j.at("trainable_layers").get<std::vector<std::string>>();
    // When tasks were overridden with a different count, default ratios to
    // the stock sequence truncated or padded with the last value.
    if (cfg.ratios.size() != cfg.tasks.size() && !j.contains("ratios")) {
        std::vector<double> r = {0.50, 0.75, 0.75};
        cfg.ratios.clear();
        for (std::size_t i = 0; i < cfg.tasks.size(); ++i)
            cfg.ratios.push_back(i < r.size() ? r[i] : r.back());
    }
    return cfg;
}

std::string config_to_json(const ExperimentConfig& config) {
    json j;
    j["input_shape"] = config.input_shape;
    j["conv_channels"] = config.conv_channels;
    j["fc_dim"] = config.fc_dim;
    j["kernel"] = config.kernel;
    j["batchnorm"] = config.batchnorm;
    json tasks = json::array();
    for (const auto& t : config.tasks) {
        json tj;
        tj["name"] = t.name;
        tj["kind"] = generator_kind_name(t.kind);
        tj["classes"] = t.class_count;
        tj["train_samples"] = t.train_samples;
        tj["eval_samples"] = t.eval_samples;
        tj["input_shape"] = t.input_shape;
        tj["variation"] = t.variation;
        tj["noise"] = t.noise;
        tj["seed"] = t.seed;
        tasks.push_back(tj);
    }
    j["tasks"] = tasks;
    j["ordering"] = config.ordering;
    j["ratios"] = config.ratios;
    j["schedule"] = {{"epochs", config.schedule.epochs},
                     {"lr", config.schedule.lr},
                     {"decay_factor", config.schedule.decay_factor},
                     {"decay_epoch", config.schedule.decay_epoch},
                     {"retrain_epochs", config.schedule.retrain_epochs},
                     {"retrain_lr", config.schedule.retrain_lr},
                     {"batch_size", config.schedule.batch_size}};
    j["seed"] = config.seed;
    j["probe_count"] = config.probe_count;
    j["separate_bias"] = config.separate_bias;
    j["filter_pruning"] = config.filter_pruning;
    if (config.trainable_layers) j["trainable_layers"] = *config.trainable_layers;
    return j.dump(2);
}

} // namespace taskpack
