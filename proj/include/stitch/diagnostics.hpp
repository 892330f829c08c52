// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "stitch/checkpoint.hpp"
#include "stitch/toy_model.hpp"

namespace stitch {

// Floor for fitted standard deviations; keeps degenerate probes out of the
// KL denominators.
inline constexpr double kSigmaFloor = 1e-12;

struct FittedNormal {
    double mu = 0.0;
    double sigma = kSigmaFloor;  // population convention, floored
};

// Scalar: one univariate normal over all elements of a hidden-state matrix.
// PerDimensionSum: one normal per hidden dimension, consecutive-layer KL
// summed across dimensions (reported alongside the scalar fits).
enum class FitMode { Scalar, PerDimensionSum };

std::string_view fit_mode_name(FitMode m);
FitMode fit_mode_from_name(std::string_view name);

// Mean and population standard deviation over all elements, sigma floored.
FittedNormal fit_normal(std::span<const double> values);
FittedNormal fit_normal(const Mat& hidden);

// Closed-form KL(N(mu_a, sigma_a^2) || N(mu_b, sigma_b^2)) =
//   ln(sigma_b/sigma_a) + (sigma_a^2 + (mu_a - mu_b)^2) / (2 sigma_b^2) - 1/2.
double kl_divergence(const FittedNormal& a, const FittedNormal& b);

struct KlPair {
    int lower_block = 0;
    int upper_block = 0;
    FittedNormal lower;
    FittedNormal upper;
    double kl = 0.0;
};

struct KLReport {
    std::string model_id;
    std::string probe_fingerprint;
    std::size_t probe_sequences = 0;
    std::size_t probe_tokens = 0;
    FitMode mode = FitMode::Scalar;
    int block_count = 0;
    std::vector<FittedNormal> block_normals;  // scalar fit per block output
    std::vector<KlPair> pairs;                // size block_count - 1

    double last_pair_kl() const;  // kl of the (second-to-last, last) pair
};

using ProbeSet = std::vector<std::vector<TokenId>>;

std::string probe_fingerprint(const ProbeSet& probes);
ProbeSet load_probes(const std::filesystem::path& path);  // JSON lines of id arrays

// Runs a forward per probe sequence, pools each block's output hidden states
// across all probes and positions, fits one normal per block, and reports the
// KL between each consecutive pair, lower block as the KL reference.
KLReport layerwise_kl_report(const Checkpoint& ckpt, const ProbeSet& probes,
                             FitMode mode = FitMode::Scalar,
                             std::string model_id = {});

struct ReportComparison {
    KLReport base;
    KLReport spliced;
    double base_last = 0.0;
    double spliced_last = 0.0;
    double delta = 0.0;  // spliced_last - base_last
};

// Both reports must come from the same probe set and fit mode.
ReportComparison compare_reports(const KLReport& base, const KLReport& spliced);

nlohmann::json report_to_json(const KLReport& report);
nlohmann::json comparison_to_json(const ReportComparison& cmp);
std::string report_to_text(const KLReport& report);
std::string comparison_to_text(const ReportComparison& cmp);

}  // namespace stitch
