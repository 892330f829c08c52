// SPDX-License-Identifier: Apache-2.0
#include "stitch/splice.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stitch/errors.hpp"

namespace stitch {

std::string_view scope_name(SpliceScope s) {
    switch (s) {
        case SpliceScope::PerTensor: return "per-tensor";
        case SpliceScope::PerLayerConcat: return "per-layer-concat";
    }
    throw ValidationError("UnknownScope", "unknown splice scope tag");
}

SpliceScope scope_from_name(std::string_view name) {
    if (name == "per-tensor") return SpliceScope::PerTensor;
    if (name == "per-layer-concat") return SpliceScope::PerLayerConcat;
    throw ValidationError("UnknownScope",
                          "scope '" + std::string(name) +
                              "' is not one of per-tensor, per-layer-concat");
}

SplicePlan build_plan(const std::vector<int>& positions,
                      const std::vector<InterpMethod>& methods,
                      const std::map<int, double>& alpha_overrides,
                      const ScheduleParams& schedule, SpliceScope scope) {
    schedule.validate();
    if (positions.empty()) {
        throw ValidationError("EmptyPlan", "a splice plan needs at least one position");
    }
    if (methods.size() != 1 && methods.size() != positions.size()) {
        throw ValidationError("MethodCountMismatch",
                              std::to_string(methods.size()) + " methods given for " +
                                  std::to_string(positions.size()) + " positions");
    }

    SplicePlan plan;
    plan.schedule = schedule;
    plan.scope = scope;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const int pos = positions[i];
        // Both flanking layers must exist, so the last insertable gap is N-2.
        if (pos < 0 || pos > schedule.layer_count - 2) {
            throw ValidationError("PositionOutOfRange",
                                  "position " + std::to_string(pos) + " is outside [0, " +
                                      std::to_string(schedule.layer_count - 2) + "]");
        }
        SpliceEntry entry;
        entry.position = pos;
        entry.method = methods.size() == 1 ? methods[0] : methods[i];
        entry.alpha = schedule_alpha(pos, schedule);
        plan.entries.push_back(entry);
    }

    for (const auto& [pos, alpha] : alpha_overrides) {
        auto it = std::find_if(plan.entries.begin(), plan.entries.end(),
                               [pos](const SpliceEntry& e) { return e.position == pos; });
        if (it == plan.entries.end()) {
            throw ValidationError("UnknownOverridePosition",
                                  "alpha override for position " + std::to_string(pos) +
                                      " which is not in the plan");
        }
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw ValidationError("AlphaOutOfRange",
                                  "alpha override " + std::to_string(alpha) + " is outside [0, 1]");
        }
        it->alpha = alpha;
        it->alpha_overridden = true;
    }

    std::sort(plan.entries.begin(), plan.entries.end(),
              [](const SpliceEntry& a, const SpliceEntry& b) { return a.position < b.position; });
    for (std::size_t i = 1; i < plan.entries.size(); ++i) {
        if (plan.entries[i].position == plan.entries[i - 1].position) {
            throw ValidationError("DuplicatePosition",
                                  "position " + std::to_string(plan.entries[i].position) +
                                      " appears more than once; run the tool twice to stack "
                                      "layers in one gap");
        }
    }
    return plan;
}

SplicePlan plan_from_json(const nlohmann::json& j, int layer_count) {
    if (!j.is_object()) {
        throw ValidationError("MalformedPlan", "plan root is not a JSON object");
    }
    if (!j.contains("positions") || !j.at("positions").is_array()) {
        throw ValidationError("MalformedPlan", "plan is missing a 'positions' array");
    }
    std::vector<int> positions;
    try {
        positions = j.at("positions").get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("MalformedPlan", "'positions' must be an array of integers");
    }

    std::vector<InterpMethod> methods;
    if (j.contains("methods")) {
        for (const auto& m : j.at("methods")) {
            methods.push_back(method_from_name(m.get<std::string>()));
        }
    } else if (j.contains("method")) {
        methods.push_back(method_from_name(j.at("method").get<std::string>()));
    } else {
        methods.push_back(InterpMethod::Slerp);
    }

    std::map<int, double> overrides;
    if (j.contains("overrides")) {
        if (!j.at("overrides").is_object()) {
            throw ValidationError("MalformedPlan", "'overrides' must map positions to alphas");
        }
        for (const auto& [key, value] : j.at("overrides").items()) {
            try {
                overrides[std::stoi(key)] = value.get<double>();
            } catch (const std::exception&) {
                throw ValidationError("MalformedPlan",
                                      "override key '" + key + "' is not a layer position");
            }
        }
    }

    ScheduleParams schedule;
    schedule.layer_count = layer_count;
    if (j.contains("k")) schedule.steepness = j.at("k").get<double>();
    if (j.contains("c")) schedule.center = j.at("c").get<double>();

    SpliceScope scope = SpliceScope::PerTensor;
    if (j.contains("scope")) scope = scope_from_name(j.at("scope").get<std::string>());

    return build_plan(positions, methods, overrides, schedule, scope);
}

nlohmann::json plan_to_json(const SplicePlan& plan) {
    nlohmann::json j;
    nlohmann::json positions = nlohmann::json::array();
    nlohmann::json methods = nlohmann::json::array();
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& e : plan.entries) {
        positions.push_back(e.position);
        methods.push_back(std::string(method_name(e.method)));
        if (e.alpha_overridden) overrides[std::to_string(e.position)] = e.alpha;
    }
    j["positions"] = positions;
    j["methods"] = methods;
    if (!overrides.empty()) j["overrides"] = overrides;
    j["k"] = plan.schedule.steepness;
    j["c"] = plan.schedule.center;
    j["scope"] = std::string(scope_name(plan.scope));
    return j;
}

namespace {

void require_compatible_bundles(const LayerBundle& lo, const LayerBundle& hi) {
    if (lo.index + 1 != hi.index) {
        throw ValidationError("PositionOutOfRange",
                              "bundles " + std::to_string(lo.index) + " and " +
                                  std::to_string(hi.index) + " are not adjacent");
    }
    if (lo.tensors.size() != hi.tensors.size()) {
        throw ValidationError("SuffixMismatch", "flanking blocks hold different tensor sets");
    }
    for (const auto& [suffix, pv] : lo.tensors) {
        auto it = hi.tensors.find(suffix);
        if (it == hi.tensors.end()) {
            throw ValidationError("SuffixMismatch",
                                  "suffix '" + suffix + "' exists only in the lower block");
        }
        if (pv.shape != it->second.shape) {
            throw ValidationError("ShapeMismatch",
                                  "suffix '" + suffix + "' has different shapes in the "
                                  "flanking blocks");
        }
    }
}

}  // namespace

LayerBundle interpolate_layer(const LayerBundle& lo, const LayerBundle& hi,
                              double alpha, InterpMethod method, SpliceScope scope) {
    require_compatible_bundles(lo, hi);

    LayerBundle out;
    out.index = lo.index;

    if (scope == SpliceScope::PerTensor) {
        for (const auto& [suffix, pv_lo] : lo.tensors) {
            const auto& pv_hi = hi.tensors.at(suffix);
            out.tensors.emplace(suffix, interpolate(pv_lo, pv_hi, alpha, method));
        }
        return out;
    }

    // Concat scope: one angle over the whole block. Canonical order is the
    // sorted suffix order of the bundle map.
    std::vector<double> lo_cat, hi_cat;
    for (const auto& [suffix, pv] : lo.tensors) {
        lo_cat.insert(lo_cat.end(), pv.values.begin(), pv.values.end());
        const auto& pv_hi = hi.tensors.at(suffix);
        hi_cat.insert(hi_cat.end(), pv_hi.values.begin(), pv_hi.values.end());
    }
    const std::vector<double> mixed = interpolate(lo_cat, hi_cat, alpha, method);

    std::size_t cursor = 0;
    for (const auto& [suffix, pv_lo] : lo.tensors) {
        ParameterVector pv;
        pv.name = pv_lo.name;
        pv.source_dtype = pv_lo.source_dtype;
        pv.shape = pv_lo.shape;
        pv.values.assign(mixed.begin() + static_cast<std::ptrdiff_t>(cursor),
                         mixed.begin() + static_cast<std::ptrdiff_t>(cursor + pv_lo.values.size()));
        cursor += pv_lo.values.size();
        out.tensors.emplace(suffix, std::move(pv));
    }
    return out;
}

SpliceResult splice_checkpoint_report(const Checkpoint& ckpt, const SplicePlan& plan,
                                      const LayerNameTemplate& tmpl) {
    const int n = ckpt.config.num_layers;
    if (plan.entries.empty()) {
        throw ValidationError("EmptyPlan", "a splice plan needs at least one position");
    }
    if (plan.schedule.layer_count != n) {
        throw ValidationError("ConfigMismatch",
                              "plan was built for " + std::to_string(plan.schedule.layer_count) +
                                  " layers but the checkpoint has " + std::to_string(n));
    }
    const std::vector<int> indices = block_indices(ckpt, tmpl);
    if (static_cast<int>(indices.size()) != n) {
        throw ValidationError("ConfigMismatch",
                              "config declares " + std::to_string(n) + " layers but " +
                                  std::to_string(indices.size()) + " block indices are present");
    }
    for (int i = 0; i < n; ++i) {
        if (indices[static_cast<std::size_t>(i)] != i) {
            throw ValidationError("ConfigMismatch", "block indices are not contiguous from 0");
        }
    }
    for (const auto& e : plan.entries) {
        if (e.position < 0 || e.position > n - 2) {
            throw ValidationError("PositionOutOfRange",
                                  "position " + std::to_string(e.position) + " is outside [0, " +
                                      std::to_string(n - 2) + "]");
        }
    }

    // New index of original block j: shifted by the entries inserted below it.
    auto new_index_of = [&plan](int original) {
        int shift = 0;
        for (const auto& e : plan.entries) {
            if (e.position < original) ++shift;
        }
        return original + shift;
    };

    SpliceResult result;
    result.checkpoint.config = ckpt.config;
    result.checkpoint.config.set_num_layers(n + static_cast<int>(plan.entries.size()));

    // Pass-through and renumbered original tensors keep their exact bytes.
    for (const auto& [name, rec] : ckpt.tensors) {
        auto parsed = parse_layer_index(name, tmpl);
        if (!parsed) {
            result.checkpoint.tensors.emplace(name, rec);
        } else {
            result.checkpoint.tensors.emplace(
                tmpl.render(new_index_of(parsed->first), parsed->second), rec);
        }
    }

    for (std::size_t rank = 0; rank < plan.entries.size(); ++rank) {
        const SpliceEntry& entry = plan.entries[rank];
        const LayerBundle lo = extract_layer_bundle(ckpt, entry.position, tmpl);
        const LayerBundle hi = extract_layer_bundle(ckpt, entry.position + 1, tmpl);
        const LayerBundle mixed =
            interpolate_layer(lo, hi, entry.alpha, entry.method, plan.scope);

        // Prior entries all sit at strictly lower positions, so the new block
        // lands right after the (already shifted) lower flank.
        const int inserted_index = entry.position + static_cast<int>(rank) + 1;

        SpliceEntryReport report;
        report.position = entry.position;
        report.inserted_index = inserted_index;
        report.method = entry.method;
        report.alpha = entry.alpha;
        report.tensor_count = mixed.tensors.size();

        double theta_sum = 0.0;
        if (plan.scope == SpliceScope::PerLayerConcat) {
            std::vector<double> lo_cat, hi_cat;
            for (const auto& [suffix, pv] : lo.tensors) {
                lo_cat.insert(lo_cat.end(), pv.values.begin(), pv.values.end());
                const auto& pv_hi = hi.tensors.at(suffix);
                hi_cat.insert(hi_cat.end(), pv_hi.values.begin(), pv_hi.values.end());
            }
            if (auto theta = try_angle_between(lo_cat, hi_cat)) {
                report.angle_count = 1;
                report.theta_min = report.theta_mean = report.theta_max = *theta;
                theta_sum = *theta;
                if (*theta < kParallelEps) report.parallel_count = 1;
            }
        } else {
            for (const auto& [suffix, pv] : lo.tensors) {
                auto theta = try_angle_between(pv.values, hi.tensors.at(suffix).values);
                if (!theta) continue;
                if (report.angle_count == 0) {
                    report.theta_min = report.theta_max = *theta;
                } else {
                    report.theta_min = std::min(report.theta_min, *theta);
                    report.theta_max = std::max(report.theta_max, *theta);
                }
                theta_sum += *theta;
                ++report.angle_count;
                if (*theta < kParallelEps) ++report.parallel_count;
            }
            if (report.angle_count > 0) {
                report.theta_mean = theta_sum / static_cast<double>(report.angle_count);
            }
        }

        for (const auto& [suffix, pv] : mixed.tensors) {
            TensorRecord rec;
            rec.dtype = pv.source_dtype;
            rec.shape = pv.shape;
            rec.data = encode_values(pv.values, pv.source_dtype);
            result.checkpoint.tensors.emplace(tmpl.render(inserted_index, suffix), std::move(rec));
        }
        result.entries.push_back(report);
    }

    return result;
}

Checkpoint splice_checkpoint(const Checkpoint& ckpt, const SplicePlan& plan,
                             const LayerNameTemplate& tmpl) {
    return splice_checkpoint_report(ckpt, plan, tmpl).checkpoint;
}

}  // namespace stitch
