#include "taskpack.h"

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "taskpack/checkpoint.hpp"
#include "taskpack/experiment.hpp"
#include "taskpack/pruning.hpp"

using nlohmann::json;

struct tp_network {
    std::unique_ptr<taskpack::PackedNetwork> impl;
};

namespace {

thread_local std::string g_last_error;

tp_status code_of(const taskpack::Error& e) {
    return static_cast<tp_status>(static_cast<int>(e.code()));
}

template <typename Fn>
tp_status guarded(Fn&& fn) {
    try {
        fn();
        return TP_OK;
    } catch (const taskpack::Error& e) {
        g_last_error = e.what();
        return code_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return TP_ERR_UNKNOWN;
    } catch (...) {
        g_last_error = "unknown error";
        return TP_ERR_UNKNOWN;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

tp_status require_arg(bool cond, const char* message) {
    if (cond) return TP_OK;
    g_last_error = message;
    return TP_ERR_USAGE;
}

taskpack::ExperimentConfig parse_config(const char* config_json) {
    return taskpack::config_from_json(config_json && *config_json ? config_json : "{}");
}

taskpack::SplitDataset parse_and_generate(const char* dataset_json) {
    auto spec = taskpack::dataset_spec_from_json(dataset_json && *dataset_json ? dataset_json
                                                                               : "{}");
    return taskpack::generate_dataset(spec);
}

taskpack::TrainSchedule parse_schedule(const char* schedule_json) {
    return taskpack::schedule_from_json(schedule_json && *schedule_json ? schedule_json : "{}");
}

std::vector<std::uint64_t> seed_list(const uint64_t* seeds, int32_t count) {
    std::vector<std::uint64_t> out;
    if (seeds && count > 0) out.assign(seeds, seeds + count);
    if (out.empty()) out = {1, 2, 3, 4, 5};
    return out;
}

json rows_summary(const std::vector<taskpack::MetricsRow>& rows) {
    json final_errors = json::object();
    json forgetting = json::array();
    for (const auto& r : rows) {
        final_errors[r.task] = r.final_top1_error;
        forgetting.push_back(r.zero_forgetting_ok);
    }
    json j;
    j["rows"] = rows.size();
    j["final_top1_error"] = final_errors;
    j["zero_forgetting_ok"] = forgetting;
    if (!rows.empty()) {
        j["overhead_bytes"] = rows.back().overhead_bytes;
        j["free_params"] = rows.back().free_params;
    }
    return j;
}

void maybe_emit(const std::vector<taskpack::MetricsRow>& rows, const char* report_path,
                const char* format, bool include_timing) {
    if (!report_path || !*report_path) return;
    taskpack::emit_report(rows, format && *format ? format : "csv", report_path, include_timing);
}

} // namespace

extern "C" {

const char* tp_last_error(void) { return g_last_error.c_str(); }

void tp_string_free(char* s) { delete[] s; }

tp_status tp_network_create(const char* config_json, uint64_t seed, tp_network** out) {
    if (auto rc = require_arg(out != nullptr, "tp_network_create: out is null")) return rc;
    return guarded([&] {
        auto cfg = parse_config(config_json);
        taskpack::PackedNetwork::Options opt;
        opt.separate_bias = cfg.separate_bias;
        opt.filter_pruning = cfg.filter_pruning;
        auto net = std::make_unique<taskpack::PackedNetwork>(taskpack::build_backbone(cfg),
                                                             cfg.input_shape, seed, opt);
        *out = new tp_network{std::move(net)};
    });
}

void tp_network_free(tp_network* net) { delete net; }

tp_status tp_network_save(const tp_network* net, const char* path) {
    if (auto rc = require_arg(net && path, "tp_network_save: null argument")) return rc;
    return guarded([&] { taskpack::save(*net->impl, path); });
}

tp_status tp_network_load(const char* path, tp_network** out) {
    if (auto rc = require_arg(path && out, "tp_network_load: null argument")) return rc;
    return guarded([&] { *out = new tp_network{taskpack::load(path)}; });
}

tp_status tp_network_export_task(const tp_network* net, int32_t task, const char* path) {
    if (auto rc = require_arg(net && path, "tp_network_export_task: null argument")) return rc;
    return guarded([&] { taskpack::export_task(*net->impl, task, path); });
}

tp_status tp_add_task(tp_network* net, const char* name, int64_t class_count,
                      int32_t* out_task) {
    if (auto rc = require_arg(net && name, "tp_add_task: null argument")) return rc;
    return guarded([&] {
        const auto id = net->impl->add_task(name, class_count);
        if (out_task) *out_task = id;
    });
}

tp_status tp_train_task(tp_network* net, int32_t task, const char* dataset_json,
                        const char* schedule_json) {
    if (auto rc = require_arg(net != nullptr, "tp_train_task: net is null")) return rc;
    return guarded([&] {
        auto split = parse_and_generate(dataset_json);
        net->impl->train_task(task, split.train, parse_schedule(schedule_json));
    });
}

tp_status tp_prune_task(tp_network* net, int32_t task, double ratio) {
    if (auto rc = require_arg(net != nullptr, "tp_prune_task: net is null")) return rc;
    return guarded([&] { net->impl->prune_task(task, ratio); });
}

tp_status tp_retrain_task(tp_network* net, int32_t task, const char* dataset_json,
                          const char* schedule_json) {
    if (auto rc = require_arg(net != nullptr, "tp_retrain_task: net is null")) return rc;
    return guarded([&] {
        auto split = parse_and_generate(dataset_json);
        net->impl->retrain_task(task, split.train, parse_schedule(schedule_json));
    });
}

tp_status tp_infer(const tp_network* net, int32_t task, const float* input,
                   const int64_t* shape, int32_t ndim, float* out_logits, int64_t out_capacity,
                   int64_t* out_len) {
    if (auto rc = require_arg(net && input && shape && ndim > 0 && out_logits,
                              "tp_infer: null argument"))
        return rc;
    return guarded([&] {
        std::vector<std::int64_t> s(shape, shape + ndim);
        // A bare sample is promoted to a batch of one.
        if (s.size() == net->impl->input_shape().size()) s.insert(s.begin(), 1);
        auto x = taskpack::make_tensor(s);
        std::copy_n(input, x->data.size(), x->data.begin());
        auto logits = net->impl->infer(task, x);
        taskpack::require(static_cast<int64_t>(logits->data.size()) <= out_capacity,
                          taskpack::ErrorCode::usage,
                          "tp_infer: output buffer holds " + std::to_string(out_capacity) +
                              " floats, need " + std::to_string(logits->data.size()));
        std::copy(logits->data.begin(), logits->data.end(), out_logits);
        if (out_len) *out_len = static_cast<int64_t>(logits->data.size());
    });
}

tp_status tp_snapshot_json(const tp_network* net, int32_t task, int64_t probe_count,
                           uint64_t probe_seed, char** out_json) {
    if (auto rc = require_arg(net && out_json, "tp_snapshot_json: null argument")) return rc;
    return guarded([&] {
        auto probes = taskpack::make_probes(net->impl->input_shape(), probe_count, probe_seed);
        auto logits = net->impl->infer(task, probes);
        json j;
        j["task"] = task;
        j["shape"] = logits->shape;
        j["logits"] = logits->data;
        *out_json = dup_string(j.dump());
    });
}

tp_status tp_evaluate(const tp_network* net, int32_t task, const char* dataset_json,
                      double* out_error) {
    if (auto rc = require_arg(net && out_error, "tp_evaluate: null argument")) return rc;
    return guarded([&] {
        auto split = parse_and_generate(dataset_json);
        *out_error = taskpack::evaluate_error(*net->impl, task, split.eval);
    });
}

tp_status tp_task_count(const tp_network* net, int32_t* out) {
    if (auto rc = require_arg(net && out, "tp_task_count: null argument")) return rc;
    return guarded([&] { *out = static_cast<int32_t>(net->impl->tasks().size()); });
}

tp_status tp_network_info_json(const tp_network* net, char** out_json) {
    if (auto rc = require_arg(net && out_json, "tp_network_info_json: null argument")) return rc;
    return guarded([&] {
        const auto& n = *net->impl;
        json tasks = json::array();
        for (const auto& rec : n.tasks()) {
            json t;
            t["id"] = rec.id;
            t["name"] = rec.name;
            t["classes"] = rec.class_count;
            t["state"] = rec.state == taskpack::TaskState::training ? "training"
                         : rec.state == taskpack::TaskState::pruned_retraining
                             ? "pruned_retraining"
                             : "frozen";
            t["ratio_used"] = rec.ratio_used;
            t["owned_params"] = n.ownership().owned_count(rec.id);
            tasks.push_back(t);
        }
        const auto& map = n.ownership();
        json j;
        j["tasks"] = tasks;
        j["input_shape"] = n.input_shape();
        j["feature_dim"] = n.feature_dim();
        j["total_params"] = map.total_entries();
        j["free_params"] = map.free_count();
        j["state_count"] = map.state_count();
        j["overhead_bytes"] = taskpack::overhead_bytes(map.total_entries(), map.state_count());
        j["biases_frozen"] = n.biases_frozen();
        j["batchnorm_frozen"] = n.batchnorm_frozen();
        j["separate_bias"] = n.separate_bias();
        j["filter_pruning"] = n.filter_pruning();
        *out_json = dup_string(j.dump());
    });
}

uint64_t tp_mask_overhead_bytes(uint64_t param_count, uint32_t state_count) {
    return taskpack::overhead_bytes(param_count, state_count);
}

tp_status tp_experiment_run(const char* config_json, int64_t seed_override,
                            const char* report_path, const char* format,
                            int32_t include_timing, char** out_summary_json) {
    return guarded([&] {
        auto cfg = parse_config(config_json);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        auto result = taskpack::run_sequence(cfg);
        maybe_emit(result.rows, report_path, format, include_timing != 0);
        if (out_summary_json) {
            json j = rows_summary(result.rows);
            j["seed"] = cfg.seed;
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

tp_status tp_experiment_ordering(const char* config_json, const uint64_t* seeds,
                                 int32_t seed_count, const char* report_path,
                                 const char* format, char** out_summary_json) {
    return guarded([&] {
        auto cfg = parse_config(config_json);
        auto study = taskpack::run_ordering_study(cfg, seed_list(seeds, seed_count));
        maybe_emit(study.rows, report_path, format, false);
        if (out_summary_json) {
            json j;
            j["task_names"] = study.task_names;
            j["mean_task_position"] = study.mean_task_position;
            j["mean_error_by_position"] = study.mean_error_by_position;
            j["runs"] = study.rows.size() / std::max<std::size_t>(1, cfg.tasks.size());
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

tp_status tp_experiment_ratios(const char* config_json, const double* ratios,
                               int32_t ratio_count, const uint64_t* seeds, int32_t seed_count,
                               const char* report_path, const char* format,
                               char** out_summary_json) {
    return guarded([&] {
        auto cfg = parse_config(config_json);
        std::vector<double> r;
        if (ratios && ratio_count > 0) r.assign(ratios, ratios + ratio_count);
        if (r.empty()) r = {0.50, 0.75, 0.90};
        auto study = taskpack::run_ratio_study(cfg, r, seed_list(seeds, seed_count));
        maybe_emit(study.rows, report_path, format, false);
        if (out_summary_json) {
            json j;
            j["ratios"] = study.ratios;
            j["mean_preprune_error"] = study.mean_preprune;
            j["mean_postprune_error"] = study.mean_postprune;
            j["mean_postretrain_error"] = study.mean_postretrain;
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

tp_status tp_experiment_layers(const char* config_json, const char* layer_sets_json,
                               const uint64_t* seeds, int32_t seed_count,
                               char** out_summary_json) {
    return guarded([&] {
        auto cfg = parse_config(config_json);
        std::vector<std::vector<std::string>> sets;
        if (layer_sets_json && *layer_sets_json) {
            json js = json::parse(layer_sets_json, nullptr, false);
            taskpack::require(!js.is_discarded() && js.is_array(), taskpack::ErrorCode::input,
                              "tp_experiment_layers: layer_sets_json must be a JSON array of "
                              "string arrays");
            for (const auto& s : js) sets.push_back(s.get<std::vector<std::string>>());
        } else {
            sets = {{}, {"fc1"}, {"conv1", "conv2", "fc1"}};
        }
        auto study = taskpack::run_layer_ablation(cfg, sets, seed_list(seeds, seed_count));
        if (out_summary_json) {
            json j;
            j["set_names"] = study.set_names;
            j["mean_error"] = study.mean_error;
            json entries = json::array();
            for (const auto& e : study.entries)
                entries.push_back({{"set", e.set_name}, {"seed", e.seed}, {"error", e.error}});
            j["entries"] = entries;
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

tp_status tp_experiment_bias(const char* config_json, const uint64_t* seeds, int32_t seed_count,
                             char** out_summary_json) {
    return guarded([&] {
        auto cfg = parse_config(config_json);
        auto study = taskpack::run_bias_ablation(cfg, seed_list(seeds, seed_count));
        if (out_summary_json) {
            json j;
            json entries = json::array();
            for (const auto& e : study.entries)
                entries.push_back({{"task", e.task},
                                   {"position", e.position},
                                   {"seed", e.seed},
                                   {"shared_error", e.shared_error},
                                   {"separate_error", e.separate_error}});
            j["entries"] = entries;
            j["mean_abs_gap"] = study.mean_abs_gap;
            j["separate_extra_bias_bytes"] = study.separate_extra_bias_bytes;
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

} // extern "C"
