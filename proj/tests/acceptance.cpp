// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: end-to-end checks over the interpolation kernels, the
// container format, the splice engine, the toy forward engine and the KL
// diagnostics, each printed as one pass/fail line. Exits nonzero if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "stitch/checkpoint.hpp"
#include "stitch/diagnostics.hpp"
#include "stitch/errors.hpp"
#include "stitch/interp.hpp"
#include "stitch/splice.hpp"
#include "stitch/toy_model.hpp"

#include "cli_runner.hpp"
#include "fs_util.hpp"

using namespace stitch;
using nlohmann::json;
using testutil::random_vector;
using testutil::read_bytes;
using testutil::run_cli;
using testutil::same_bytes;
using testutil::TempDir;

namespace {

void require(bool condition, const std::string& message) {
    if (!condition) throw std::runtime_error(message);
}

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

ToyModelConfig toy_config(int layers, int hidden = 8, int heads = 2, int inter = 12,
                          int vocab = 16) {
    ToyModelConfig cfg;
    cfg.num_layers = layers;
    cfg.hidden_size = hidden;
    cfg.num_heads = heads;
    cfg.intermediate_size = inter;
    cfg.vocab_size = vocab;
    return cfg;
}

// ---- criterion 1: boundary identity + slerp norm preservation -------------

std::string boundary_suite() {
    const double started = now_seconds();
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<std::size_t> dim_dist(1, 4096);
    int norm_checks = 0;
    int antipodal_scalars = 0;

    for (int pair = 0; pair < 1000; ++pair) {
        const std::size_t dim = dim_dist(rng);
        const auto p = random_vector(rng, dim);
        const auto q = random_vector(rng, dim);
        for (InterpMethod m : {InterpMethod::Slerp, InterpMethod::Lerp, InterpMethod::Bcerp}) {
            require(interpolate(p, q, 0.0, m) == p, "m(p,q,0) != p");
            require(interpolate(p, q, 1.0, m) == q, "m(p,q,1) != q");
        }

        // Unit-norm preservation at interior ratios.
        auto pu = p;
        auto qu = q;
        const double np = l2_norm(pu), nq = l2_norm(qu);
        if (np == 0.0 || nq == 0.0) continue;
        for (auto& x : pu) x /= np;
        for (auto& x : qu) x /= nq;
        if (dim == 1 && pu[0] * qu[0] < 0.0) {
            // Opposite-sign scalars are exactly antipodal: the path is
            // ill-defined and must be reported as such.
            try {
                slerp(pu, qu, 0.5);
                require(false, "antipodal pair did not raise AntipodalVectors");
            } catch (const ValidationError&) {
                ++antipodal_scalars;
            }
            continue;
        }
        for (double alpha : {0.25, 0.5, 0.75}) {
            const double norm = l2_norm(slerp(pu, qu, alpha));
            require(std::abs(norm - 1.0) <= 1e-9, "slerp norm deviates by more than 1e-9");
            ++norm_checks;
        }
    }

    const double elapsed = now_seconds() - started;
    require(elapsed < 10.0, "boundary suite exceeded 10 s");
    std::ostringstream detail;
    detail << "1000 pairs, dims 1-4096, " << norm_checks << " norm checks, "
           << antipodal_scalars << " antipodal scalars, " << std::fixed << elapsed << " s";
    return detail.str();
}

// ---- criterion 2: bcerp/lerp collapse --------------------------------------

std::string collapse_suite() {
    std::mt19937_64 rng(1002);
    std::uniform_int_distribution<std::size_t> dim_dist(1, 512);
    double worst = 0.0;
    for (int pair = 0; pair < 1000; ++pair) {
        const std::size_t dim = dim_dist(rng);
        const auto p = random_vector(rng, dim, -3.0, 3.0);
        const auto q = random_vector(rng, dim, -3.0, 3.0);
        const double scale = std::max({max_abs(p), max_abs(q), 1e-300});
        for (int step = 0; step <= 10; ++step) {
            const double alpha = step / 10.0;
            const auto b = bcerp(p, q, alpha);
            const auto l = lerp(p, q, alpha);
            double gap = 0.0;
            for (std::size_t i = 0; i < dim; ++i) gap = std::max(gap, std::abs(b[i] - l[i]));
            worst = std::max(worst, gap / scale);
        }
    }
    require(worst <= 1e-12, "bcerp deviates from lerp by more than 1e-12 relative");
    std::ostringstream detail;
    detail << "1000 pairs x 11 ratios, max relative deviation " << std::scientific << worst;
    return detail.str();
}

// ---- criterion 3: schedule conformance -------------------------------------

std::string schedule_suite() {
    ScheduleParams params;  // k = 4, c = 0.375, N = 32
    require(std::abs(schedule_alpha(12, params) - 0.5) <= 1e-12, "alpha(12) != 0.5");

    const double alpha24 = 1.0 / (1.0 + std::exp(-4.0 * (24.0 / 32.0 - 0.375)));
    const double alpha28 = 1.0 / (1.0 + std::exp(-4.0 * (28.0 / 32.0 - 0.375)));
    require(std::abs(schedule_alpha(24, params) - alpha24) <= 1e-5, "alpha(24) mismatch");
    require(std::abs(schedule_alpha(24, params) - 0.81757) <= 1e-5, "alpha(24) != 0.81757");
    require(std::abs(schedule_alpha(28, params) - alpha28) <= 1e-5, "alpha(28) mismatch");
    require(std::abs(schedule_alpha(28, params) - 0.88080) <= 1e-5, "alpha(28) != 0.88080");

    double previous = -1.0;
    for (int i = 0; i < 32; ++i) {
        const double alpha = schedule_alpha(i, params);
        require(alpha > previous, "schedule is not strictly increasing");
        require(alpha > 0.0 && alpha < 1.0, "schedule left (0,1)");
        previous = alpha;
    }
    std::ostringstream detail;
    detail << "alpha(12)=0.5, alpha(24)=" << std::setprecision(6) << schedule_alpha(24, params)
           << ", alpha(28)=" << schedule_alpha(28, params) << ", monotone over 0..31";
    return detail.str();
}

// ---- criterion 4: container round trips ------------------------------------

std::string container_suite() {
    const double started = now_seconds();
    TempDir dir;
    std::mt19937_64 rng(1004);
    const Dtype dtypes[] = {Dtype::F64, Dtype::F32, Dtype::F16, Dtype::BF16};
    const int heads_options[] = {1, 2, 4};

    for (int trial = 0; trial < 50; ++trial) {
        ToyModelConfig cfg;
        cfg.num_layers = 1 + static_cast<int>(rng() % 5);
        cfg.num_heads = heads_options[rng() % 3];
        cfg.hidden_size = cfg.num_heads * static_cast<int>(2 + rng() % 6);
        cfg.intermediate_size = 4 + static_cast<int>(rng() % 24);
        cfg.vocab_size = 8 + static_cast<int>(rng() % 48);
        cfg.dtype = dtypes[rng() % 4];

        const Checkpoint generated = generate_toy_checkpoint(cfg, rng());
        const auto f1 = dir.file("t" + std::to_string(trial) + "-1.safetensors");
        const auto f2 = dir.file("t" + std::to_string(trial) + "-2.safetensors");
        const auto f3 = dir.file("t" + std::to_string(trial) + "-3.safetensors");
        write_checkpoint(generated, f1);
        write_checkpoint(read_checkpoint(f1), f2);
        write_checkpoint(read_checkpoint(f2), f3);
        require(same_bytes(f2, f3), "second and third writes differ");
        require(same_bytes(f1, f2), "first and second writes differ");
    }
    const double elapsed = now_seconds() - started;
    require(elapsed < 30.0, "container suite exceeded 30 s");
    std::ostringstream detail;
    detail << "50 randomized checkpoints across f64/f32/f16/bf16, " << std::fixed << elapsed
           << " s";
    return detail.str();
}

// ---- criterion 5: splice structural suite ----------------------------------

std::string splice_suite() {
    const auto tmpl = LayerNameTemplate::llama();
    std::mt19937_64 rng(1005);
    int plans_checked = 0;

    for (int n = 2; n <= 8; ++n) {
        const Checkpoint base = generate_toy_checkpoint(toy_config(n), 500 + n);
        ScheduleParams schedule;
        schedule.layer_count = n;

        std::vector<std::vector<int>> position_sets;
        for (int p = 0; p <= n - 2; ++p) position_sets.push_back({p});
        if (n >= 3) {
            std::vector<int> all;
            for (int p = 0; p <= n - 2; ++p) all.push_back(p);
            position_sets.push_back(all);
        }

        for (const auto& positions : position_sets) {
            const InterpMethod method = std::vector{InterpMethod::Slerp, InterpMethod::Lerp,
                                                    InterpMethod::Bcerp}[rng() % 3];
            const SplicePlan plan = build_plan(positions, {method}, {}, schedule);
            const Checkpoint spliced = splice_checkpoint(base, plan);
            const int m = static_cast<int>(positions.size());

            require(spliced.config.num_layers == n + m, "config layer count wrong");
            const auto indices = block_indices(spliced, tmpl);
            require(static_cast<int>(indices.size()) == n + m, "block count wrong");
            for (int i = 0; i < n + m; ++i) {
                require(indices[static_cast<std::size_t>(i)] == i, "indices not contiguous");
            }
            for (int original = 0; original < n; ++original) {
                int shift = 0;
                for (int p : positions) {
                    if (p < original) ++shift;
                }
                for (const auto& suffix : tmpl.expected_suffixes) {
                    require(spliced.tensors.at(tmpl.render(original + shift, suffix)).data ==
                                base.tensors.at(tmpl.render(original, suffix)).data,
                            "original block bytes changed");
                }
            }
            ++plans_checked;
        }

        // Boundary ratios copy the flanking blocks exactly.
        for (double alpha : {0.0, 1.0}) {
            const int position = static_cast<int>(rng() % static_cast<std::uint64_t>(n - 1));
            const SplicePlan plan =
                build_plan({position}, {InterpMethod::Slerp}, {{position, alpha}}, schedule);
            const Checkpoint spliced = splice_checkpoint(base, plan);
            const int source = alpha == 0.0 ? position : position + 1;
            for (const auto& suffix : tmpl.expected_suffixes) {
                require(spliced.tensors.at(tmpl.render(position + 1, suffix)).data ==
                            base.tensors.at(tmpl.render(source, suffix)).data,
                        "boundary splice is not an exact copy");
            }
            ++plans_checked;
        }
    }
    return std::to_string(plans_checked) + " plans over N in 2..8";
}

// ---- criterion 6: forward semantics of an alpha=0 splice -------------------

std::string forward_semantics_suite() {
    const Checkpoint base = generate_toy_checkpoint(toy_config(4, 16, 4, 24, 32), 600);
    ScheduleParams schedule;
    schedule.layer_count = 4;
    const SplicePlan plan = build_plan({1}, {InterpMethod::Slerp}, {{1, 0.0}}, schedule);
    const Checkpoint spliced = splice_checkpoint(base, plan);

    const std::vector<TokenId> tokens{3, 1, 4, 1, 5, 9, 2, 6};
    const ToyModel base_model(base);
    const ForwardTrace base_trace = base_model.forward(tokens);
    const ForwardTrace spliced_trace = ToyModel(spliced).forward(tokens);

    const auto rel_gap = [](const Mat& a, const Mat& b) {
        double gap = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            gap = std::max(gap, std::abs(a.data[i] - b.data[i]));
            scale = std::max({scale, std::abs(a.data[i]), std::abs(b.data[i])});
        }
        return scale > 0.0 ? gap / scale : gap;
    };

    // Hidden states at and before the insertion point are unchanged.
    for (int boundary = 0; boundary <= 2; ++boundary) {
        require(rel_gap(spliced_trace.hidden[static_cast<std::size_t>(boundary)],
                        base_trace.hidden[static_cast<std::size_t>(boundary)]) <= 1e-12,
                "prefix hidden state differs");
    }
    // The inserted block re-applies base block 1.
    const Mat twice = base_model.apply_block(base_trace.hidden[2], 1);
    require(rel_gap(spliced_trace.hidden[3], twice) <= 1e-12,
            "inserted block is not base block 1 applied twice");
    return "alpha=0 insert at l=1 re-applies block 1 within 1e-12; prefix intact";
}

// ---- criterion 7: KL closed form vs quadrature ------------------------------

std::string kl_suite() {
    std::mt19937_64 rng(1007);
    std::uniform_real_distribution<double> mu_dist(-3.0, 3.0);
    std::uniform_real_distribution<double> sigma_dist(0.4, 3.0);

    const auto quadrature = [](double mu_a, double sigma_a, double mu_b, double sigma_b) {
        const double lo = std::min(mu_a, mu_b) - 14.0 * std::max(sigma_a, sigma_b);
        const double hi = std::max(mu_a, mu_b) + 14.0 * std::max(sigma_a, sigma_b);
        const int intervals = 200000;
        const double h = (hi - lo) / intervals;
        const auto log_pdf = [](double x, double mu, double sigma) {
            const double z = (x - mu) / sigma;
            return -0.5 * z * z - std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
        };
        const auto f = [&](double x) {
            const double lp = log_pdf(x, mu_a, sigma_a);
            return std::exp(lp) * (lp - log_pdf(x, mu_b, sigma_b));
        };
        double sum = f(lo) + f(hi);
        for (int i = 1; i < intervals; ++i) sum += f(lo + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
        return sum * h / 3.0;
    };

    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const FittedNormal a{mu_dist(rng), sigma_dist(rng)};
        const FittedNormal b{mu_dist(rng), sigma_dist(rng)};
        const double closed = kl_divergence(a, b);
        const double integrated = quadrature(a.mu, a.sigma, b.mu, b.sigma);
        worst = std::max(worst, std::abs(closed - integrated));
        require(std::abs(closed - integrated) <= 1e-6, "closed form disagrees with quadrature");
        require(closed >= 0.0, "negative KL");
        require(kl_divergence(a, a) == 0.0, "KL(a||a) != 0");
    }

    // Nonnegativity on actual report outputs.
    const Checkpoint ckpt = generate_toy_checkpoint(toy_config(4, 16, 4, 24, 32), 700);
    const KLReport report = layerwise_kl_report(ckpt, {{1, 2, 3}, {4, 5}}, FitMode::Scalar, "m");
    for (const auto& pair : report.pairs) require(pair.kl >= 0.0, "report emitted negative KL");

    std::ostringstream detail;
    detail << "100 random pairs, max |closed - quadrature| = " << std::scientific << worst;
    return detail.str();
}

// ---- criterion 8: early-exit consistency ------------------------------------

std::string early_exit_suite() {
    const Checkpoint base = generate_toy_checkpoint(toy_config(6, 16, 4, 24, 32), 800);
    ScheduleParams schedule;
    schedule.layer_count = 6;
    const Checkpoint spliced =
        splice_checkpoint(base, build_plan({4}, {InterpMethod::Slerp}, {}, schedule));

    const std::vector<TokenId> tokens{7, 7, 3, 0, 9};
    const ToyModel base_model(base);
    const ForwardTrace trace = base_model.forward(tokens);
    require(base_model.early_exit_logits(tokens, 5).data == trace.logits.data,
            "early exit at the final block is not the forward output");

    const ToyModel spliced_model(spliced);
    for (int block = 0; block <= 4; ++block) {
        require(base_model.early_exit_logits(tokens, block).data ==
                    spliced_model.early_exit_logits(tokens, block).data,
                "pre-insertion early exit changed");
    }
    return "final-block exit bitwise equal; blocks 0..4 identical across the splice";
}

// ---- criterion 9: proportional forward overhead -----------------------------

std::string overhead_suite() {
    const int n = 6, m = 3;
    ToyModelConfig cfg = toy_config(n, 64, 8, 128, 64);
    const Checkpoint base = generate_toy_checkpoint(cfg, 900);
    ScheduleParams schedule;
    schedule.layer_count = n;
    const Checkpoint spliced =
        splice_checkpoint(base, build_plan({1, 2, 4}, {InterpMethod::Slerp}, {}, schedule));

    const ToyModel base_model(base);
    const ToyModel spliced_model(spliced);
    std::vector<TokenId> tokens(32);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        tokens[i] = static_cast<TokenId>((i * 7) % 64);
    }

    for (int warmup = 0; warmup < 5; ++warmup) {
        base_model.forward(tokens);
        spliced_model.forward(tokens);
    }

    // Interleave the two measurements so load drift hits both sides equally.
    double base_total = 0.0, spliced_total = 0.0;
    for (int i = 0; i < 100; ++i) {
        double t0 = now_seconds();
        base_model.forward(tokens);
        double t1 = now_seconds();
        spliced_model.forward(tokens);
        double t2 = now_seconds();
        base_total += t1 - t0;
        spliced_total += t2 - t1;
    }

    const double ratio = spliced_total / base_total;
    const double expected = static_cast<double>(n + m) / n;
    require(std::abs(ratio - expected) <= 0.2 * expected,
            "overhead ratio " + std::to_string(ratio) + " outside 20% of " +
                std::to_string(expected));
    std::ostringstream detail;
    detail << "mean ratio " << std::setprecision(4) << ratio << " vs expected " << expected
           << " over 100 forwards";
    return detail.str();
}

// ---- criterion 10: CLI pipeline, twice, bit-identical ------------------------

std::string pipeline_suite() {
    TempDir dir;
    const auto base = dir.file("base.safetensors");
    const auto spliced = dir.file("spliced.safetensors");
    const auto probes = dir.file("probes.jsonl");
    {
        std::ofstream file(probes);
        file << "[1, 5, 9, 13]\n[2, 4, 6, 8, 10]\n";
    }
    struct RunOutput {
        std::vector<char> model_bytes, config_bytes;
        std::string compare_json, compare_text;
    };
    const auto run_pipeline = [&]() {
        testutil::CliResult r = run_cli("genmodel -o " + base.string() +
                                        " --layers 6 --d-model 16 --heads 4 --intermediate 24 "
                                        "--vocab 32 --seed 12345");
        require(r.exit_code == 0, "genmodel failed");
        r = run_cli("splice " + base.string() + " -o " + spliced.string() +
                    " --positions 1,3 --method slerp");
        require(r.exit_code == 0, "splice failed");
        RunOutput out;
        out.model_bytes = read_bytes(spliced);
        out.config_bytes = read_bytes(config_path_for(spliced));
        r = run_cli("diagnose --compare " + base.string() + " " + spliced.string() + " --probe " +
                    probes.string() + " --json");
        require(r.exit_code == 0, "diagnose --json failed");
        out.compare_json = r.out;
        r = run_cli("diagnose --compare " + base.string() + " " + spliced.string() + " --probe " +
                    probes.string());
        require(r.exit_code == 0, "diagnose failed");
        out.compare_text = r.out;
        return out;
    };

    const RunOutput first = run_pipeline();
    const RunOutput second = run_pipeline();
    require(first.model_bytes == second.model_bytes, "spliced checkpoints differ between runs");
    require(first.config_bytes == second.config_bytes, "spliced configs differ between runs");
    require(first.compare_json == second.compare_json, "JSON comparison differs between runs");
    require(first.compare_text == second.compare_text, "text comparison differs between runs");

    const json cmp = json::parse(first.compare_json);
    const std::size_t base_pairs = cmp.at("base").at("pairs").size();
    const std::size_t spliced_pairs = cmp.at("spliced").at("pairs").size();
    require(spliced_pairs == base_pairs + 2, "spliced report does not add M pairs");
    require(cmp.at("last_pair").contains("delta"), "comparison lacks a last-pair delta");

    const auto delta_pos = first.compare_text.find("delta = ");
    require(delta_pos != std::string::npos, "text comparison lacks a delta line");
    const char sign = first.compare_text.at(delta_pos + 8);
    require(sign == '+' || sign == '-', "delta is not printed with a sign");

    std::ostringstream detail;
    detail << "genmodel -> splice {1,3} -> diagnose --compare; +" << (spliced_pairs - base_pairs)
           << " pairs, delta " << cmp.at("last_pair").at("delta").dump()
           << ", two runs bit-identical";
    return detail.str();
}

struct Criterion {
    int id;
    std::string name;
    std::function<std::string()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "interpolation boundary suite", boundary_suite},
        {2, "bcerp-lerp collapse", collapse_suite},
        {3, "schedule conformance", schedule_suite},
        {4, "container round trip", container_suite},
        {5, "splice structural suite", splice_suite},
        {6, "forward semantics of alpha=0 splice", forward_semantics_suite},
        {7, "gaussian KL correctness", kl_suite},
        {8, "early-exit consistency", early_exit_suite},
        {9, "proportional forward overhead", overhead_suite},
        {10, "end-to-end diagnostics pipeline", pipeline_suite},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        try {
            const std::string detail = criterion.run();
            std::printf("PASS [%2d] %s: %s\n", criterion.id, criterion.name.c_str(),
                        detail.c_str());
        } catch (const std::exception& e) {
            ++failures;
            std::printf("FAIL [%2d] %s: %s\n", criterion.id, criterion.name.c_str(), e.what());
        }
        std::fflush(stdout);
    }
    if (failures > 0) {
        std::printf("%d of %zu criteria failed\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", criteria.size());
    return 0;
}
