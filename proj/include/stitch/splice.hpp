// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "stitch/checkpoint.hpp"
#include "stitch/interp.hpp"

namespace stitch {

// Whether the interpolation angle is computed per tensor or once over the
// concatenation of all block tensors (canonical = lexicographic suffix order).
enum class SpliceScope { PerTensor, PerLayerConcat };

std::string_view scope_name(SpliceScope s);
SpliceScope scope_from_name(std::string_view name);

// One insertion: a new block between original blocks `position` and
// `position + 1`. Positions are zero-based ORIGINAL indices; they never shift
// with other entries in the same plan.
struct SpliceEntry {
    int position = 0;
    InterpMethod method = InterpMethod::Slerp;
    double alpha = 0.5;
    bool alpha_overridden = false;
};

struct SplicePlan {
    std::vector<SpliceEntry> entries;  // strictly increasing positions
    ScheduleParams schedule;
    SpliceScope scope = SpliceScope::PerTensor;
};

// Validates positions against schedule.layer_count, sorts them, fills each
// alpha from the sigmoid schedule unless overridden. `methods` holds either
// one method for all positions or one per position (pre-sort order).
SplicePlan build_plan(const std::vector<int>& positions,
                      const std::vector<InterpMethod>& methods,
                      const std::map<int, double>& alpha_overrides,
                      const ScheduleParams& schedule,
                      SpliceScope scope = SpliceScope::PerTensor);

// Plan JSON: {"positions": [...], "method": "slerp" | "methods": [...],
//             "overrides": {"24": 0.9}, "k": 4.0, "c": 0.375, "scope": "..."}.
// layer_count is taken from the target checkpoint, not the file.
SplicePlan plan_from_json(const nlohmann::json& j, int layer_count);
nlohmann::json plan_to_json(const SplicePlan& plan);

// Interpolates two flanking bundles into the new block's bundle.
// lo.index + 1 must equal hi.index and the suffix/shape sets must match.
LayerBundle interpolate_layer(const LayerBundle& lo, const LayerBundle& hi,
                              double alpha, InterpMethod method,
                              SpliceScope scope);

// Per-entry summary collected while splicing: where the block landed and the
// distribution of interpolation angles across its tensors.
struct SpliceEntryReport {
    int position = 0;        // original flanking index
    int inserted_index = 0;  // block index in the output model
    InterpMethod method = InterpMethod::Slerp;
    double alpha = 0.0;
    std::size_t tensor_count = 0;
    double theta_min = 0.0;
    double theta_mean = 0.0;
    double theta_max = 0.0;
    std::size_t angle_count = 0;     // tensors with a defined angle
    std::size_t parallel_count = 0;  // angles under the lerp-fallback threshold
};

struct SpliceResult {
    Checkpoint checkpoint;
    std::vector<SpliceEntryReport> entries;
};

// Applies the plan: original blocks keep their bytes and are renumbered by
// their cumulative insertion offset, pass-through tensors are untouched, and
// the config layer count becomes N + M.
SpliceResult splice_checkpoint_report(const Checkpoint& ckpt, const SplicePlan& plan,
                                      const LayerNameTemplate& tmpl = LayerNameTemplate::llama());
Checkpoint splice_checkpoint(const Checkpoint& ckpt, const SplicePlan& plan,
                             const LayerNameTemplate& tmpl = LayerNameTemplate::llama());

}  // namespace stitch
