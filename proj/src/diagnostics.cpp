// SPDX-License-Identifier: Apache-2.0
#include "stitch/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stitch/errors.hpp"

namespace stitch {

std::string_view fit_mode_name(FitMode m) {
    switch (m) {
        case FitMode::Scalar: return "scalar";
        case FitMode::PerDimensionSum: return "per-dim-sum";
    }
    throw ValidationError("UnknownFitMode", "unknown fit mode tag");
}

FitMode fit_mode_from_name(std::string_view name) {
    if (name == "scalar") return FitMode::Scalar;
    if (name == "per-dim-sum") return FitMode::PerDimensionSum;
    throw ValidationError("UnknownFitMode",
                          "fit mode '" + std::string(name) +
                              "' is not one of scalar, per-dim-sum");
}

FittedNormal fit_normal(std::span<const double> values) {
    if (values.empty()) {
        throw ValidationError("EmptyInput", "cannot fit a normal to zero samples");
    }
    // Welford's online recurrence; the tests check it against a two-pass
    // computation.
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t count = 0;
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ValidationError("NonFiniteInput", "hidden states contain a non-finite value");
        }
        ++count;
        const double delta = v - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (v - mean);
    }
    FittedNormal out;
    out.mu = mean;
    out.sigma = std::max(std::sqrt(m2 / static_cast<double>(count)), kSigmaFloor);
    return out;
}

FittedNormal fit_normal(const Mat& hidden) {
    return fit_normal(std::span<const double>(hidden.data));
}

double kl_divergence(const FittedNormal& a, const FittedNormal& b) {
    if (!(a.sigma > 0.0) || !(b.sigma > 0.0)) {
        throw ValidationError("InvalidSigma", "KL divergence needs positive sigmas");
    }
    const double var_a = a.sigma * a.sigma;
    const double var_b = b.sigma * b.sigma;
    const double mean_gap = a.mu - b.mu;
    const double kl = std::log(b.sigma / a.sigma) + (var_a + mean_gap * mean_gap) / (2.0 * var_b) - 0.5;
    return std::max(kl, 0.0);  // the closed form is >= 0; clamp rounding residue
}

std::string probe_fingerprint(const ProbeSet& probes) {
    // FNV-1a over token ids with a separator between sequences.
    std::uint64_t hash = 1469598103934665603ull;
    const auto mix = [&hash](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hash ^= (v >> (8 * i)) & 0xFF;
            hash *= 1099511628211ull;
        }
    };
    for (const auto& seq : probes) {
        mix(0xFFFFFFFFFFFFFFFFull);
        for (TokenId id : seq) mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(buf);
}

ProbeSet load_probes(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("IoFailure", "cannot open probe file '" + path.string() + "'");
    }
    ProbeSet probes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("MalformedProbe", "probe line " + std::to_string(line_no) +
                                                " is not valid JSON: " + e.what());
        }
        if (!j.is_array()) {
            throw IoError("MalformedProbe",
                          "probe line " + std::to_string(line_no) + " is not an array of ids");
        }
        std::vector<TokenId> seq;
        for (const auto& v : j) {
            if (!v.is_number_integer()) {
                throw IoError("MalformedProbe", "probe line " + std::to_string(line_no) +
                                                    " contains a non-integer token id");
            }
            seq.push_back(v.get<TokenId>());
        }
        probes.push_back(std::move(seq));
    }
    return probes;
}

double KLReport::last_pair_kl() const {
    if (pairs.empty()) {
        throw ValidationError("EmptyInput", "report has no consecutive-layer pairs");
    }
    return pairs.back().kl;
}

KLReport layerwise_kl_report(const Checkpoint& ckpt, const ProbeSet& probes,
                             FitMode mode, std::string model_id) {
    if (probes.empty()) {
        throw ValidationError("EmptyInput", "probe set is empty");
    }
    const ToyModel model(ckpt);
    const int blocks = model.num_layers();
    const int width = model.config().hidden_size;

    // Pool the output of each block across every probe sequence and position.
    std::vector<std::vector<double>> pooled(static_cast<std::size_t>(blocks));
    std::size_t total_tokens = 0;
    for (const auto& seq : probes) {
        const ForwardTrace trace = model.forward(seq);
        total_tokens += seq.size();
        for (int b = 0; b < blocks; ++b) {
            const Mat& m = trace.hidden[static_cast<std::size_t>(b) + 1];
            auto& pool = pooled[static_cast<std::size_t>(b)];
            pool.insert(pool.end(), m.data.begin(), m.data.end());
        }
    }

    KLReport report;
    report.model_id = std::move(model_id);
    report.probe_fingerprint = probe_fingerprint(probes);
    report.probe_sequences = probes.size();
    report.probe_tokens = total_tokens;
    report.mode = mode;
    report.block_count = blocks;

    for (int b = 0; b < blocks; ++b) {
        report.block_normals.push_back(fit_normal(pooled[static_cast<std::size_t>(b)]));
    }

    for (int b = 0; b + 1 < blocks; ++b) {
        KlPair pair;
        pair.lower_block = b;
        pair.upper_block = b + 1;
        pair.lower = report.block_normals[static_cast<std::size_t>(b)];
        pair.upper = report.block_normals[static_cast<std::size_t>(b) + 1];
        if (mode == FitMode::Scalar) {
            pair.kl = kl_divergence(pair.lower, pair.upper);
        } else {
            // One normal per hidden dimension, KL summed across dimensions.
            const auto& lo = pooled[static_cast<std::size_t>(b)];
            const auto& hi = pooled[static_cast<std::size_t>(b) + 1];
            const std::size_t rows = lo.size() / static_cast<std::size_t>(width);
            std::vector<double> column(rows);
            double sum = 0.0;
            for (int d = 0; d < width; ++d) {
                for (std::size_t r = 0; r < rows; ++r) {
                    column[r] = lo[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(d)];
                }
                const FittedNormal fit_lo = fit_normal(column);
                for (std::size_t r = 0; r < rows; ++r) {
                    column[r] = hi[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(d)];
                }
                const FittedNormal fit_hi = fit_normal(column);
                sum += kl_divergence(fit_lo, fit_hi);
            }
            pair.kl = sum;
        }
        report.pairs.push_back(pair);
    }
    return report;
}

ReportComparison compare_reports(const KLReport& base, const KLReport& spliced) {
    if (base.probe_fingerprint != spliced.probe_fingerprint) {
        throw ValidationError("ProbeMismatch", "reports were produced from different probe sets");
    }
    if (base.mode != spliced.mode) {
        throw ValidationError("ProbeMismatch", "reports were produced with different fit modes");
    }
    ReportComparison cmp;
    cmp.base = base;
    cmp.spliced = spliced;
    cmp.base_last = base.last_pair_kl();
    cmp.spliced_last = spliced.last_pair_kl();
    cmp.delta = cmp.spliced_last - cmp.base_last;
    return cmp;
}

nlohmann::json report_to_json(const KLReport& report) {
    nlohmann::json j;
    j["model"] = report.model_id;
    j["probe"] = {{"sequences", report.probe_sequences},
                  {"tokens", report.probe_tokens},
                  {"fingerprint", report.probe_fingerprint}};
    j["fit_mode"] = std::string(fit_mode_name(report.mode));
    j["block_count"] = report.block_count;
    nlohmann::json normals = nlohmann::json::array();
    for (std::size_t b = 0; b < report.block_normals.size(); ++b) {
        normals.push_back({{"block", b},
                           {"mu", report.block_normals[b].mu},
                           {"sigma", report.block_normals[b].sigma}});
    }
    j["block_normals"] = std::move(normals);
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : report.pairs) {
        pairs.push_back({{"lower_block", p.lower_block},
                         {"upper_block", p.upper_block},
                         {"mu_lower", p.lower.mu},
                         {"sigma_lower", p.lower.sigma},
                         {"mu_upper", p.upper.mu},
                         {"sigma_upper", p.upper.sigma},
                         {"kl", p.kl}});
    }
    j["pairs"] = std::move(pairs);
    if (!report.pairs.empty()) j["last_pair_kl"] = report.pairs.back().kl;
    return j;
}

nlohmann::json comparison_to_json(const ReportComparison& cmp) {
    nlohmann::json j;
    j["base"] = report_to_json(cmp.base);
    j["spliced"] = report_to_json(cmp.spliced);
    j["last_pair"] = {{"base", cmp.base_last},
                      {"spliced", cmp.spliced_last},
                      {"delta", cmp.delta}};
    return j;
}

std::string report_to_text(const KLReport& report) {
    std::ostringstream out;
    char line[160];
    out << "model: " << report.model_id << "\n";
    std::snprintf(line, sizeof(line), "probe: %zu sequences, %zu tokens (fp %s)\n",
                  report.probe_sequences, report.probe_tokens,
                  report.probe_fingerprint.c_str());
    out << line;
    out << "fit mode: " << fit_mode_name(report.mode) << "\n";
    std::snprintf(line, sizeof(line), "%-8s %-16s %-16s\n", "block", "mu", "sigma");
    out << line;
    for (std::size_t b = 0; b < report.block_normals.size(); ++b) {
        std::snprintf(line, sizeof(line), "%-8zu %-16.8g %-16.8g\n", b,
                      report.block_normals[b].mu, report.block_normals[b].sigma);
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-10s %-16s\n", "pair", "kl");
    out << line;
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "(%d,%d)%*s %-16.8g\n", p.lower_block, p.upper_block,
                      std::max(0, 9 - static_cast<int>(std::to_string(p.lower_block).size() +
                                                       std::to_string(p.upper_block).size() + 3)),
                      "", p.kl);
        out << line;
    }
    if (!report.pairs.empty()) {
        const auto& last = report.pairs.back();
        std::snprintf(line, sizeof(line), "last pair (%d,%d): kl = %.8g\n", last.lower_block,
                      last.upper_block, last.kl);
        out << line;
    } else {
        out << "last pair: none (fewer than two blocks)\n";
    }
    return out.str();
}

std::string comparison_to_text(const ReportComparison& cmp) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "probe: %zu sequences, %zu tokens (fp %s)\n",
                  cmp.base.probe_sequences, cmp.base.probe_tokens,
                  cmp.base.probe_fingerprint.c_str());
    out << line;
    out << "base: " << cmp.base.model_id << "\n";
    out << "spliced: " << cmp.spliced.model_id << "\n";
    std::snprintf(line, sizeof(line), "%-6s %-12s %-12s %-16s %-16s\n", "idx", "base pair",
                  "spliced pair", "base kl", "spliced kl");
    out << line;
    const std::size_t rows = std::max(cmp.base.pairs.size(), cmp.spliced.pairs.size());
    for (std::size_t i = 0; i < rows; ++i) {
        std::string base_pair = "-", spliced_pair = "-";
        std::string base_kl = "-", spliced_kl = "-";
        char buf[64];
        if (i < cmp.base.pairs.size()) {
            const auto& p = cmp.base.pairs[i];
            base_pair = "(" + std::to_string(p.lower_block) + "," + std::to_string(p.upper_block) + ")";
            std::snprintf(buf, sizeof(buf), "%.8g", p.kl);
            base_kl = buf;
        }
        if (i < cmp.spliced.pairs.size()) {
            const auto& p = cmp.spliced.pairs[i];
            spliced_pair =
                "(" + std::to_string(p.lower_block) + "," + std::to_string(p.upper_block) + ")";
            std::snprintf(buf, sizeof(buf), "%.8g", p.kl);
            spliced_kl = buf;
        }
        std::snprintf(line, sizeof(line), "%-6zu %-12s %-12s %-16s %-16s\n", i, base_pair.c_str(),
                      spliced_pair.c_str(), base_kl.c_str(), spliced_kl.c_str());
        out << line;
    }
    std::snprintf(line, sizeof(line),
                  "last-pair kl: base = %.8g, spliced = %.8g, delta = %+.8g\n", cmp.base_last,
                  cmp.spliced_last, cmp.delta);
    out << line;
    return out.str();
}

}  // namespace stitch
