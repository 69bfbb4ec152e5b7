// Command-line front end. All engine work goes through the C API in
// taskpack.h; this file only parses arguments and shuffles JSON.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taskpack.h"

namespace {

using nlohmann::json;

// 0 = success, 1 = usage or bad input, 2 = violated engine contract.
int exit_code_for(tp_status rc) {
    switch (rc) {
        case TP_OK: return 0;
        case TP_ERR_INPUT:
        case TP_ERR_USAGE:
        case TP_ERR_DIMENSION: return 1;
        default: return 2;
    }
}

int fail(tp_status rc) {
    std::cerr << "error: " << tp_last_error() << "\n";
    return exit_code_for(rc);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw CLI::ValidationError("cannot read file '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string read_optional(const std::string& path) {
    return path.empty() ? std::string("{}") : read_file(path);
}

struct NetHandle {
    tp_network* net = nullptr;
    ~NetHandle() { tp_network_free(net); }
};

struct StringOut {
    char* s = nullptr;
    ~StringOut() { tp_string_free(s); }
};

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
    return seeds;
}

std::vector<double> parse_ratio_list(const std::string& csv) {
    std::vector<double> ratios;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) ratios.push_back(std::stod(tok));
    return ratios;
}

int open_task_id(tp_network* net) {
    int32_t count = 0;
    tp_task_count(net, &count);
    return count;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"taskpack: pack multiple classification tasks into one fixed-size network"};
    app.require_subcommand(1);

    // ---- init ----
    std::string init_out, init_config;
    std::uint64_t init_seed = 42;
    auto* init = app.add_subcommand("init", "create a fresh network checkpoint");
    init->add_option("--out", init_out, "checkpoint path to write")->required();
    init->add_option("--config", init_config, "backbone config JSON file");
    init->add_option("--seed", init_seed, "network seed");

    // ---- add-task ----
    std::string at_net, at_name;
    std::int64_t at_classes = 5;
    auto* addtask = app.add_subcommand("add-task", "open a new task with a private head");
    addtask->add_option("--net", at_net, "checkpoint to update")->required();
    addtask->add_option("--name", at_name, "task name")->required();
    addtask->add_option("--classes", at_classes, "class count");

    // ---- train / retrain ----
    std::string tr_net, tr_data, tr_sched;
    int tr_task = 0;
    bool tr_eval = false;
    auto* train = app.add_subcommand("train", "train the open task on a dataset recipe");
    train->add_option("--net", tr_net)->required();
    train->add_option("--task", tr_task, "task id (default: the open task)");
    train->add_option("--data", tr_data, "dataset recipe JSON file")->required();
    train->add_option("--schedule", tr_sched, "schedule JSON file");
    train->add_flag("--eval", tr_eval, "print eval error after training");

    std::string rt_net, rt_data, rt_sched;
    int rt_task = 0;
    auto* retrain = app.add_subcommand("retrain", "recover the pruned task, then freeze it");
    retrain->add_option("--net", rt_net)->required();
    retrain->add_option("--task", rt_task, "task id (default: the open task)");
    retrain->add_option("--data", rt_data, "dataset recipe JSON file")->required();
    retrain->add_option("--schedule", rt_sched, "schedule JSON file");

    // ---- prune ----
    std::string pr_net;
    int pr_task = 0;
    double pr_ratio = 0.75;
    auto* prune = app.add_subcommand("prune", "magnitude-prune the open task's free weights");
    prune->add_option("--net", pr_net)->required();
    prune->add_option("--task", pr_task, "task id (default: the open task)");
    prune->add_option("--ratio", pr_ratio, "fraction of free weights to prune")->required();

    // ---- infer ----
    std::string in_net, in_input;
    int in_task = 1;
    std::int64_t in_probes = 0;
    std::uint64_t in_probe_seed = 7;
    auto* infer = app.add_subcommand("infer", "run masked inference for a task");
    infer->add_option("--net", in_net)->required();
    infer->add_option("--task", in_task, "task id");
    infer->add_option("--input", in_input, "JSON file: {\"shape\": [...], \"data\": [...]}");
    infer->add_option("--probes", in_probes, "use N deterministic probe inputs instead");
    infer->add_option("--probe-seed", in_probe_seed, "probe seed");

    // ---- report ----
    std::string rp_net, rp_out, rp_format = "json";
    auto* report = app.add_subcommand("report", "budget and overhead report for a checkpoint");
    report->add_option("--net", rp_net)->required();
    report->add_option("--out", rp_out, "write to file instead of stdout");
    report->add_option("--format", rp_format, "json or csv");

    // ---- export-task ----
    std::string ex_net, ex_out;
    int ex_task = 1;
    auto* exportt = app.add_subcommand("export-task", "write a dense single-task checkpoint");
    exportt->add_option("--net", ex_net)->required();
    exportt->add_option("--task", ex_task)->required();
    exportt->add_option("--out", ex_out)->required();

    // ---- codec ----
    auto* codec = app.add_subcommand("codec", "mask codec utilities");
    std::uint64_t cs_params = 0;
    std::uint32_t cs_tasks = 0;
    auto* codec_size = codec->add_subcommand("size", "mask overhead in bytes");
    codec_size->add_option("params", cs_params, "parameter count")->required();
    codec_size->add_option("tasks", cs_tasks, "state count (tasks, plus one if free remain)")
        ->required();

    // ---- experiment ----
    auto* experiment = app.add_subcommand("experiment", "desk-scale packing experiments");
    std::string xp_config, xp_out, xp_format = "csv", xp_seeds, xp_ratios, xp_sets;
    std::int64_t xp_seed = -1;
    bool xp_timing = false;

    auto* run = experiment->add_subcommand("run", "one packing sequence per the config");
    run->add_option("config", xp_config, "experiment config JSON file")->required();
    run->add_option("--out", xp_out, "report file");
    run->add_option("--format", xp_format, "csv or json");
    run->add_option("--seed", xp_seed, "override the config seed");
    run->add_flag("--timing", xp_timing, "append the volatile wall-time column");

    auto* ordering = experiment->add_subcommand("ordering", "all task orderings x seeds");
    ordering->add_option("config", xp_config)->required();
    ordering->add_option("--out", xp_out, "report file");
    ordering->add_option("--format", xp_format, "csv or json");
    ordering->add_option("--seeds", xp_seeds, "comma-separated seed list");

    auto* ratios = experiment->add_subcommand("ratios", "three-phase errors per prune ratio");
    ratios->add_option("config", xp_config)->required();
    ratios->add_option("--out", xp_out, "report file");
    ratios->add_option("--format", xp_format, "csv or json");
    ratios->add_option("--ratios", xp_ratios, "comma-separated ratios (default 0.5,0.75,0.9)");
    ratios->add_option("--seeds", xp_seeds, "comma-separated seed list");

    auto* layers = experiment->add_subcommand("layers", "trainable-layer-subset ablation");
    layers->add_option("config", xp_config)->required();
    layers->add_option("--sets", xp_sets, "JSON array of layer-name arrays");
    layers->add_option("--seeds", xp_seeds, "comma-separated seed list");

    auto* bias = experiment->add_subcommand("bias", "shared vs separate per-task biases");
    bias->add_option("config", xp_config)->required();
    bias->add_option("--seeds", xp_seeds, "comma-separated seed list");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e); // prints the message or help text
        return rc == 0 ? 0 : 1;    // usage problems exit 1, --help exits 0
    }

    try {
        if (*init) {
            NetHandle h;
            const std::string cfg = read_optional(init_config);
            if (auto rc = tp_network_create(cfg.c_str(), init_seed, &h.net)) return fail(rc);
            if (auto rc = tp_network_save(h.net, init_out.c_str())) return fail(rc);
            std::cout << "initialized " << init_out << "\n";
            return 0;
        }

        if (*addtask) {
            NetHandle h;
            if (auto rc = tp_network_load(at_net.c_str(), &h.net)) return fail(rc);
            int32_t id = 0;
            if (auto rc = tp_add_task(h.net, at_name.c_str(), at_classes, &id)) return fail(rc);
            if (auto rc = tp_network_save(h.net, at_net.c_str())) return fail(rc);
            std::cout << "task " << id << " (" << at_name << ") added\n";
            return 0;
        }

        if (*train || *retrain) {
            const bool is_retrain = static_cast<bool>(*retrain);
            const std::string net_path = is_retrain ? rt_net : tr_net;
            NetHandle h;
            if (auto rc = tp_network_load(net_path.c_str(), &h.net)) return fail(rc);
            int task = is_retrain ? rt_task : tr_task;
            if (task == 0) task = open_task_id(h.net);
            const std::string data = read_file(is_retrain ? rt_data : tr_data);
            const std::string sched = read_optional(is_retrain ? rt_sched : tr_sched);
            const tp_status rc =
                is_retrain ? tp_retrain_task(h.net, task, data.c_str(), sched.c_str())
                           : tp_train_task(h.net, task, data.c_str(), sched.c_str());
            if (rc) return fail(rc);
            if (auto src = tp_network_save(h.net, net_path.c_str())) return fail(src);
            std::cout << (is_retrain ? "retrained" : "trained") << " task " << task << "\n";
            if (!is_retrain && tr_eval) {
                double err = 0.0;
                if (auto erc = tp_evaluate(h.net, task, data.c_str(), &err)) return fail(erc);
                std::cout << "eval top-1 error: " << err << "%\n";
            }
            return 0;
        }

        if (*prune) {
            NetHandle h;
            if (auto rc = tp_network_load(pr_net.c_str(), &h.net)) return fail(rc);
            int task = pr_task ? pr_task : open_task_id(h.net);
            if (auto rc = tp_prune_task(h.net, task, pr_ratio)) return fail(rc);
            if (auto rc = tp_network_save(h.net, pr_net.c_str())) return fail(rc);
            std::cout << "pruned task " << task << " at ratio " << pr_ratio << "\n";
            return 0;
        }

        if (*infer) {
            NetHandle h;
            if (auto rc = tp_network_load(in_net.c_str(), &h.net)) return fail(rc);
            if (in_probes > 0) {
                StringOut out;
                if (auto rc = tp_snapshot_json(h.net, in_task, in_probes, in_probe_seed, &out.s))
                    return fail(rc);
                std::cout << out.s << "\n";
                return 0;
            }
            if (in_input.empty()) {
                std::cerr << "error: infer needs --input or --probes\n";
                return 1;
            }
            json inj = json::parse(read_file(in_input), nullptr, false);
            if (inj.is_discarded() || !inj.contains("shape") || !inj.contains("data")) {
                std::cerr << "error: input file must be {\"shape\": [...], \"data\": [...]}\n";
                return 1;
            }
            const auto shape = inj.at("shape").get<std::vector<std::int64_t>>();
            const auto data = inj.at("data").get<std::vector<float>>();
            std::int64_t expect = 1;
            for (auto d : shape) expect *= d;
            if (expect != static_cast<std::int64_t>(data.size())) {
                std::cerr << "error: data length does not match shape\n";
                return 1;
            }
            std::vector<float> logits(static_cast<std::size_t>(1) << 20);
            std::int64_t got = 0;
            if (auto rc = tp_infer(h.net, in_task, data.data(), shape.data(),
                                   static_cast<int32_t>(shape.size()), logits.data(),
                                   static_cast<std::int64_t>(logits.size()), &got))
                return fail(rc);
            logits.resize(static_cast<std::size_t>(got));
            json out;
            out["task"] = in_task;
            out["logits"] = logits;
            std::cout << out.dump() << "\n";
            return 0;
        }

        if (*report) {
            NetHandle h;
            if (auto rc = tp_network_load(rp_net.c_str(), &h.net)) return fail(rc);
            StringOut info;
            if (auto rc = tp_network_info_json(h.net, &info.s)) return fail(rc);
            std::string text;
            if (rp_format == "json") {
                text = json::parse(std::string(info.s)).dump(2) + "\n";
            } else if (rp_format == "csv") {
                json j = json::parse(std::string(info.s));
                std::ostringstream os;
                os << "task_id,name,classes,state,ratio_used,owned_params,"
                      "free_params,total_params,state_count,overhead_bytes\n";
                for (const auto& t : j.at("tasks")) {
                    os << t.at("id").get<int>() << ',' << t.at("name").get<std::string>() << ','
                       << t.at("classes").get<std::int64_t>() << ','
                       << t.at("state").get<std::string>() << ','
                       << t.at("ratio_used").get<double>() << ','
                       << t.at("owned_params").get<std::uint64_t>() << ','
                       << j.at("free_params").get<std::uint64_t>() << ','
                       << j.at("total_params").get<std::uint64_t>() << ','
                       << j.at("state_count").get<std::uint32_t>() << ','
                       << j.at("overhead_bytes").get<std::uint64_t>() << '\n';
                }
                text = os.str();
            } else {
                std::cerr << "error: --format must be json or csv\n";
                return 1;
            }
            if (rp_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(rp_out, std::ios::binary);
                if (!out.good()) {
                    std::cerr << "error: cannot write '" << rp_out << "'\n";
                    return 2;
                }
                out << text;
            }
            return 0;
        }

        if (*exportt) {
            NetHandle h;
            if (auto rc = tp_network_load(ex_net.c_str(), &h.net)) return fail(rc);
            if (auto rc = tp_network_export_task(h.net, ex_task, ex_out.c_str()))
                return fail(rc);
            std::cout << "exported task " << ex_task << " to " << ex_out << "\n";
            return 0;
        }

        if (*codec_size) {
            std::cout << tp_mask_overhead_bytes(cs_params, cs_tasks) << "\n";
            return 0;
        }

        if (*experiment) {
            const std::string cfg = read_file(xp_config);
            const auto seeds = parse_seed_list(xp_seeds);
            const uint64_t* seed_ptr = seeds.empty() ? nullptr : seeds.data();
            const auto nseeds = static_cast<int32_t>(seeds.size());
            StringOut summary;
            tp_status rc = TP_OK;
            if (*run) {
                rc = tp_experiment_run(cfg.c_str(), xp_seed,
                                       xp_out.empty() ? nullptr : xp_out.c_str(),
                                       xp_format.c_str(), xp_timing ? 1 : 0, &summary.s);
            } else if (*ordering) {
                rc = tp_experiment_ordering(cfg.c_str(), seed_ptr, nseeds,
                                            xp_out.empty() ? nullptr : xp_out.c_str(),
                                            xp_format.c_str(), &summary.s);
            } else if (*ratios) {
                const auto r = parse_ratio_list(xp_ratios);
                rc = tp_experiment_ratios(cfg.c_str(), r.empty() ? nullptr : r.data(),
                                          static_cast<int32_t>(r.size()), seed_ptr, nseeds,
                                          xp_out.empty() ? nullptr : xp_out.c_str(),
                                          xp_format.c_str(), &summary.s);
            } else if (*layers) {
                rc = tp_experiment_layers(cfg.c_str(), xp_sets.empty() ? nullptr : xp_sets.c_str(),
                                          seed_ptr, nseeds, &summary.s);
            } else if (*bias) {
                rc = tp_experiment_bias(cfg.c_str(), seed_ptr, nseeds, &summary.s);
            } else {
                std::cerr << "error: experiment needs a subcommand\n";
                return 1;
            }
            if (rc) return fail(rc);
            if (summary.s) std::cout << summary.s << "\n";
            return 0;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
