// SPDX-License-Identifier: Apache-2.0
//
// layerstitch: checkpoint surgery for decoder-only transformers. Inserts new
// blocks built by interpolating adjacent layers, schedules their mixing
// ratios, and runs desk-scale forward diagnostics on the result.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "stitch/checkpoint.hpp"
#include "stitch/diagnostics.hpp"
#include "stitch/errors.hpp"
#include "stitch/interp.hpp"
#include "stitch/splice.hpp"
#include "stitch/toy_model.hpp"

namespace {

using nlohmann::json;

bool log_enabled() {
    const char* level = std::getenv("LAYERSTITCH_LOG");
    return level == nullptr || std::string_view(level) != "quiet";
}

void log_info(const std::string& message) {
    if (log_enabled()) std::fprintf(stderr, "%s\n", message.c_str());
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw stitch::ValidationError("BadFlag", std::string(what) + " entry '" + item +
                                                         "' is not an integer");
        }
    }
    if (out.empty()) {
        throw stitch::ValidationError("BadFlag", std::string(what) + " list is empty");
    }
    return out;
}

std::vector<stitch::InterpMethod> parse_method_list(const std::string& text) {
    std::vector<stitch::InterpMethod> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(stitch::method_from_name(item));
    }
    if (out.empty()) {
        throw stitch::ValidationError("BadFlag", "method list is empty");
    }
    return out;
}

std::map<int, double> parse_override_list(const std::string& text) {
    std::map<int, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw stitch::ValidationError("BadFlag", "alpha override '" + item +
                                                         "' is not of the form POS=ALPHA");
        }
        try {
            out[std::stoi(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw stitch::ValidationError("BadFlag", "alpha override '" + item +
                                                         "' is not of the form POS=ALPHA");
        }
    }
    return out;
}

// "1 2 3" or "[1, 2, 3]".
std::vector<stitch::TokenId> parse_tokens(const std::string& text) {
    std::vector<stitch::TokenId> out;
    const auto first = text.find_first_not_of(" \t");
    if (first != std::string::npos && text[first] == '[') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw stitch::ValidationError("BadFlag",
                                          std::string("token JSON does not parse: ") + e.what());
        }
        if (!j.is_array()) {
            throw stitch::ValidationError("BadFlag", "token JSON is not an array");
        }
        for (const auto& v : j) {
            if (!v.is_number_integer()) {
                throw stitch::ValidationError("BadFlag", "token JSON contains a non-integer");
            }
            out.push_back(v.get<stitch::TokenId>());
        }
    } else {
        std::stringstream ss(text);
        std::string item;
        while (ss >> item) {
            try {
                out.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw stitch::ValidationError("BadFlag",
                                              "token '" + item + "' is not an integer id");
            }
        }
    }
    if (out.empty()) {
        throw stitch::ValidationError("BadFlag", "token sequence is empty");
    }
    return out;
}

struct SpliceArgs {
    std::string input;
    std::string output;
    std::string positions;
    std::string method = "slerp";
    std::string methods;
    std::string overrides;
    std::string plan_path;
    double steepness = 4.0;
    double center = 0.375;
    std::string scope = "per-tensor";
    bool as_json = false;
};

int run_splice(const SpliceArgs& args) {
    const stitch::Checkpoint ckpt = stitch::read_checkpoint(args.input);
    const int n = ckpt.config.num_layers;

    stitch::SplicePlan plan;
    if (!args.plan_path.empty()) {
        if (!args.positions.empty() || !args.methods.empty() || !args.overrides.empty()) {
            std::fprintf(stderr,
                         "warning: --plan overrides the plan flags given on the command line\n");
        }
        std::ifstream plan_file(args.plan_path);
        if (!plan_file) {
            throw stitch::IoError("IoFailure", "cannot open plan '" + args.plan_path + "'");
        }
        json plan_json;
        try {
            plan_file >> plan_json;
        } catch (const json::exception& e) {
            throw stitch::ValidationError("MalformedPlan",
                                          std::string("plan is not valid JSON: ") + e.what());
        }
        plan = stitch::plan_from_json(plan_json, n);
    } else {
        if (args.positions.empty()) {
            throw stitch::ValidationError("EmptyPlan", "either --positions or --plan is required");
        }
        std::vector<stitch::InterpMethod> methods;
        if (!args.methods.empty()) {
            methods = parse_method_list(args.methods);
        } else {
            methods.push_back(stitch::method_from_name(args.method));
        }
        stitch::ScheduleParams schedule;
        schedule.steepness = args.steepness;
        schedule.center = args.center;
        schedule.layer_count = n;
        plan = stitch::build_plan(parse_int_list(args.positions, "--positions"), methods,
                                  parse_override_list(args.overrides), schedule,
                                  stitch::scope_from_name(args.scope));
    }

    const stitch::SpliceResult result = stitch::splice_checkpoint_report(ckpt, plan);
    stitch::write_checkpoint(result.checkpoint, args.output);
    log_info("spliced " + std::to_string(n) + " -> " +
             std::to_string(result.checkpoint.config.num_layers) + " blocks into '" +
             args.output + "'");

    if (args.as_json) {
        json j;
        j["input"] = args.input;
        j["output"] = args.output;
        j["blocks_before"] = n;
        j["blocks_after"] = result.checkpoint.config.num_layers;
        j["scope"] = std::string(stitch::scope_name(plan.scope));
        json entries = json::array();
        for (const auto& e : result.entries) {
            entries.push_back({{"position", e.position},
                               {"inserted_index", e.inserted_index},
                               {"method", std::string(stitch::method_name(e.method))},
                               {"alpha", e.alpha},
                               {"tensors", e.tensor_count},
                               {"theta_min", e.theta_min},
                               {"theta_mean", e.theta_mean},
                               {"theta_max", e.theta_max},
                               {"parallel_fallbacks", e.parallel_count}});
        }
        j["entries"] = std::move(entries);
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%-10s %-10s %-8s %-10s %-10s %-10s %-10s %-9s\n", "position", "new index",
                    "method", "alpha", "theta min", "theta mean", "theta max", "parallel");
        for (const auto& e : result.entries) {
            std::printf("%-10d %-10d %-8s %-10.6f %-10.6f %-10.6f %-10.6f %-9zu\n", e.position,
                        e.inserted_index, std::string(stitch::method_name(e.method)).c_str(),
                        e.alpha, e.theta_min, e.theta_mean, e.theta_max, e.parallel_count);
        }
        std::printf("blocks: %d -> %d\n", n, result.checkpoint.config.num_layers);
    }
    return 0;
}

int run_schedule(int n, const std::string& positions, double k, double c, bool as_json) {
    stitch::ScheduleParams params;
    params.steepness = k;
    params.center = c;
    params.layer_count = n;

    const std::vector<int> pos = parse_int_list(positions, "--positions");
    json rows = json::array();
    for (int p : pos) {
        const double alpha = stitch::schedule_alpha(p, params);
        rows.push_back({{"position", p},
                        {"relative_depth", static_cast<double>(p) / n},
                        {"alpha", alpha}});
    }
    if (as_json) {
        json j;
        j["n"] = n;
        j["k"] = k;
        j["c"] = c;
        j["schedule"] = std::move(rows);
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%-10s %-16s %-16s\n", "position", "depth (l/N)", "alpha");
        for (const auto& row : rows) {
            std::printf("%-10d %-16.6f %-16.8f\n", row.at("position").get<int>(),
                        row.at("relative_depth").get<double>(), row.at("alpha").get<double>());
        }
    }
    return 0;
}

int run_inspect(const std::string& path, bool strict, bool as_json) {
    const stitch::Checkpoint ckpt = stitch::read_checkpoint(path);
    const auto tmpl = stitch::LayerNameTemplate::llama();
    const std::vector<int> blocks = stitch::block_indices(ckpt, tmpl);
    const bool consistent = stitch::layer_count_consistent(ckpt, tmpl);

    if (as_json) {
        json j;
        j["path"] = path;
        j["config_layers"] = ckpt.config.num_layers;
        j["block_indices"] = blocks;
        j["layer_count_consistent"] = consistent;
        json tensors = json::array();
        for (const auto& [name, rec] : ckpt.tensors) {
            tensors.push_back({{"name", name},
                               {"dtype", std::string(stitch::dtype_name(rec.dtype))},
                               {"shape", rec.shape}});
        }
        j["tensors"] = std::move(tensors);
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%s: %zu tensors, %zu blocks, config layer count %d\n", path.c_str(),
                    ckpt.tensors.size(), blocks.size(), ckpt.config.num_layers);
        for (const auto& [name, rec] : ckpt.tensors) {
            std::string shape = "[";
            for (std::size_t i = 0; i < rec.shape.size(); ++i) {
                shape += (i ? "," : "") + std::to_string(rec.shape[i]);
            }
            shape += "]";
            std::printf("%-52s %-5s %s\n", name.c_str(),
                        std::string(stitch::dtype_name(rec.dtype)).c_str(), shape.c_str());
        }
    }
    if (!consistent) {
        std::fprintf(stderr,
                     "warning: config declares %d layers but %zu block indices are present\n",
                     ckpt.config.num_layers, blocks.size());
        if (strict) return 1;
    }
    return 0;
}

int run_diagnose(const std::vector<std::string>& models, const std::vector<std::string>& compare,
                 const std::string& probe_path, const std::string& mode_name, bool as_json) {
    const stitch::ProbeSet probes = stitch::load_probes(probe_path);
    const stitch::FitMode mode = stitch::fit_mode_from_name(mode_name);

    if (!compare.empty()) {
        const stitch::KLReport base = stitch::layerwise_kl_report(
            stitch::read_checkpoint(compare[0]), probes, mode, compare[0]);
        const stitch::KLReport spliced = stitch::layerwise_kl_report(
            stitch::read_checkpoint(compare[1]), probes, mode, compare[1]);
        const stitch::ReportComparison cmp = stitch::compare_reports(base, spliced);
        if (as_json) {
            std::printf("%s\n", stitch::comparison_to_json(cmp).dump(2).c_str());
        } else {
            std::printf("%s", stitch::comparison_to_text(cmp).c_str());
        }
        return 0;
    }

    if (models.empty()) {
        throw stitch::ValidationError("BadFlag", "give a checkpoint path or --compare BASE SPLICED");
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
        const stitch::KLReport report = stitch::layerwise_kl_report(
            stitch::read_checkpoint(models[i]), probes, mode, models[i]);
        if (as_json) {
            std::printf("%s\n", stitch::report_to_json(report).dump(2).c_str());
        } else {
            if (i > 0) std::printf("\n");
            std::printf("%s", stitch::report_to_text(report).c_str());
        }
    }
    return 0;
}

struct GenModelArgs {
    std::string output;
    int layers = 4;
    int d_model = 32;
    int heads = 4;
    int intermediate = 80;
    int vocab = 256;
    double rope_base = 10000.0;
    std::string dtype = "f32";
    std::uint64_t seed = 42;
    bool as_json = false;
};

int run_genmodel(const GenModelArgs& args) {
    stitch::ToyModelConfig cfg;
    cfg.num_layers = args.layers;
    cfg.hidden_size = args.d_model;
    cfg.num_heads = args.heads;
    cfg.intermediate_size = args.intermediate;
    cfg.vocab_size = args.vocab;
    cfg.rope_theta = args.rope_base;
    std::string dtype_tag = args.dtype;
    for (auto& ch : dtype_tag) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    cfg.dtype = stitch::dtype_from_name(dtype_tag);

    const stitch::Checkpoint ckpt = stitch::generate_toy_checkpoint(cfg, args.seed);
    stitch::write_checkpoint(ckpt, args.output);
    log_info("wrote " + std::to_string(ckpt.tensors.size()) + " tensors to '" + args.output + "'");
    if (args.as_json) {
        json j;
        j["output"] = args.output;
        j["layers"] = cfg.num_layers;
        j["hidden_size"] = cfg.hidden_size;
        j["tensors"] = ckpt.tensors.size();
        j["seed"] = args.seed;
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%s: %d layers, %zu tensors, seed %llu\n", args.output.c_str(), cfg.num_layers,
                    ckpt.tensors.size(), static_cast<unsigned long long>(args.seed));
    }
    return 0;
}

int run_earlyexit(const std::string& path, const std::string& tokens_text, int layer, int top,
                  bool as_json) {
    const std::vector<stitch::TokenId> tokens = parse_tokens(tokens_text);
    const stitch::ToyModel model(stitch::read_checkpoint(path));
    const stitch::Mat logits = model.early_exit_logits(tokens, layer);

    // Rank the logits of the last position.
    const std::int64_t last = logits.rows - 1;
    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(static_cast<std::size_t>(logits.cols));
    for (std::int64_t v = 0; v < logits.cols; ++v) {
        ranked.emplace_back(logits.at(last, v), static_cast<int>(v));
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t count = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(top));

    if (as_json) {
        json j;
        j["model"] = path;
        j["layer"] = layer;
        j["position"] = last;
        json rows = json::array();
        for (std::size_t i = 0; i < count; ++i) {
            rows.push_back({{"token", ranked[i].second}, {"logit", ranked[i].first}});
        }
        j["top"] = std::move(rows);
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("early exit at block %d, last position %lld, top %zu of %lld logits\n", layer,
                    static_cast<long long>(last), count, static_cast<long long>(logits.cols));
        for (std::size_t i = 0; i < count; ++i) {
            std::printf("%-8d %.10g\n", ranked[i].second, ranked[i].first);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer checkpoint surgery: interpolated-layer insertion and diagnostics"};
    app.require_subcommand(1);

    SpliceArgs splice_args;
    auto* splice = app.add_subcommand("splice", "insert interpolated blocks into a checkpoint");
    splice->add_option("input", splice_args.input, "input .safetensors checkpoint")->required();
    splice->add_option("--output,-o", splice_args.output, "output checkpoint path")->required();
    splice->add_option("--positions", splice_args.positions,
                       "comma-separated original block indices (new block goes after each)");
    splice->add_option("--method", splice_args.method, "slerp, lerp or bcerp (uniform)");
    splice->add_option("--methods", splice_args.methods, "per-position method list");
    splice->add_option("--alpha-overrides", splice_args.overrides,
                       "POS=ALPHA pairs replacing the scheduled ratio");
    splice->add_option("--plan", splice_args.plan_path, "plan JSON file (wins over plan flags)");
    splice->add_option("--k", splice_args.steepness, "schedule steepness");
    splice->add_option("--c", splice_args.center, "schedule center offset");
    splice->add_option("--scope", splice_args.scope, "per-tensor or per-layer-concat");
    splice->add_flag("--json", splice_args.as_json, "JSON summary on stdout");

    int sched_n = 32;
    std::string sched_positions;
    double sched_k = 4.0, sched_c = 0.375;
    bool sched_json = false;
    auto* schedule = app.add_subcommand("schedule", "print the sigmoid ratio schedule");
    schedule->add_option("--n", sched_n, "total layer count")->required();
    schedule->add_option("--positions", sched_positions, "comma-separated layer indices")->required();
    schedule->add_option("--k", sched_k, "steepness");
    schedule->add_option("--c", sched_c, "center offset");
    schedule->add_flag("--json", sched_json, "JSON table on stdout");

    std::string inspect_path;
    bool inspect_strict = false, inspect_json = false;
    auto* inspect = app.add_subcommand("inspect", "list checkpoint tensors and config");
    inspect->add_option("input", inspect_path, "checkpoint path")->required();
    inspect->add_flag("--strict", inspect_strict, "exit 1 on config/tensor count mismatch");
    inspect->add_flag("--json", inspect_json, "JSON listing on stdout");

    std::vector<std::string> diag_models, diag_compare;
    std::string diag_probe, diag_mode = "scalar";
    bool diag_json = false;
    auto* diagnose = app.add_subcommand("diagnose", "layerwise hidden-state KL report");
    diagnose->add_option("models", diag_models, "checkpoint path(s)");
    diagnose->add_option("--compare", diag_compare, "BASE SPLICED checkpoint pair")
        ->expected(2);
    diagnose->add_option("--probe", diag_probe, "JSON-lines probe file of token-id arrays")
        ->required();
    diagnose->add_option("--mode", diag_mode, "scalar or per-dim-sum");
    diagnose->add_flag("--json", diag_json, "JSON report on stdout");

    GenModelArgs gen_args;
    auto* genmodel = app.add_subcommand("genmodel", "write a deterministic toy checkpoint");
    genmodel->add_option("--output,-o", gen_args.output, "output checkpoint path")->required();
    genmodel->add_option("--layers", gen_args.layers, "block count");
    genmodel->add_option("--d-model", gen_args.d_model, "hidden size");
    genmodel->add_option("--heads", gen_args.heads, "attention heads");
    genmodel->add_option("--intermediate", gen_args.intermediate, "feed-forward width");
    genmodel->add_option("--vocab", gen_args.vocab, "vocabulary size");
    genmodel->add_option("--rope-base", gen_args.rope_base, "rotary base");
    genmodel->add_option("--dtype", gen_args.dtype, "f64, f32, f16 or bf16");
    genmodel->add_option("--seed", gen_args.seed, "PRNG seed");
    genmodel->add_flag("--json", gen_args.as_json, "JSON summary on stdout");

    std::string exit_path, exit_tokens;
    int exit_layer = 0, exit_top = 5;
    bool exit_json = false;
    auto* earlyexit = app.add_subcommand("earlyexit", "top logits read out at an intermediate block");
    earlyexit->add_option("input", exit_path, "checkpoint path")->required();
    earlyexit->add_option("--tokens", exit_tokens, "token ids, whitespace-separated or JSON array")
        ->required();
    earlyexit->add_option("--layer", exit_layer, "block index to exit after")->required();
    earlyexit->add_option("--top", exit_top, "how many logits to print");
    earlyexit->add_flag("--json", exit_json, "JSON output on stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: BadFlag: %s\n", e.what());
        return 1;
    }

    try {
        if (splice->parsed()) return run_splice(splice_args);
        if (schedule->parsed())
            return run_schedule(sched_n, sched_positions, sched_k, sched_c, sched_json);
        if (inspect->parsed()) return run_inspect(inspect_path, inspect_strict, inspect_json);
        if (diagnose->parsed())
            return run_diagnose(diag_models, diag_compare, diag_probe, diag_mode, diag_json);
        if (genmodel->parsed()) return run_genmodel(gen_args);
        if (earlyexit->parsed())
            return run_earlyexit(exit_path, exit_tokens, exit_layer, exit_top, exit_json);
    } catch (const stitch::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const stitch::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: Internal: %s\n", e.what());
        return 2;
    }
    return 0;
}
