// SPDX-License-Identifier: Apache-2.0
#include "stitch/interp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stitch/errors.hpp"

namespace stitch {

namespace {

void require_same_length(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw ValidationError("DimensionMismatch",
                              "vectors have " + std::to_string(p.size()) + " and " +
                                  std::to_string(q.size()) + " elements");
    }
}

void require_alpha_in_range(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ValidationError("AlphaOutOfRange",
                              "alpha " + std::to_string(alpha) + " is outside [0, 1]");
    }
}

double l2_norm(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

std::vector<double> copy_of(std::span<const double> v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::int64_t ParameterVector::numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::string_view method_name(InterpMethod m) {
    switch (m) {
        case InterpMethod::Slerp: return "slerp";
        case InterpMethod::Lerp: return "lerp";
        case InterpMethod::Bcerp: return "bcerp";
    }
    throw ValidationError("UnknownMethod", "unknown interpolation method tag");
}

InterpMethod method_from_name(std::string_view name) {
    if (name == "slerp") return InterpMethod::Slerp;
    if (name == "lerp") return InterpMethod::Lerp;
    if (name == "bcerp") return InterpMethod::Bcerp;
    throw ValidationError("UnknownMethod",
                          "interpolation method '" + std::string(name) +
                              "' is not one of slerp, lerp, bcerp");
}

void ScheduleParams::validate() const {
    if (!(steepness > 0.0)) {
        throw ValidationError("InvalidSchedule", "steepness k must be > 0");
    }
    if (!(center >= 0.0 && center <= 1.0)) {
        throw ValidationError("InvalidSchedule", "center c must be in [0, 1]");
    }
    if (layer_count < 2) {
        throw ValidationError("InvalidSchedule", "layer count N must be >= 2");
    }
}

double angle_between(std::span<const double> p, std::span<const double> q) {
    require_same_length(p, q);
    const double np = l2_norm(p);
    const double nq = l2_norm(q);
    if (np == 0.0 || nq == 0.0) {
        throw ValidationError("ZeroVector", "cannot measure an angle against a zero vector");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * q[i];
    const double cos_theta = std::clamp(dot / (np * nq), -1.0, 1.0);
    return std::acos(cos_theta);
}

std::optional<double> try_angle_between(std::span<const double> p,
                                        std::span<const double> q) {
    if (p.size() != q.size()) return std::nullopt;
    if (l2_norm(p) == 0.0 || l2_norm(q) == 0.0) return std::nullopt;
    return angle_between(p, q);
}

std::vector<double> slerp(std::span<const double> p, std::span<const double> q,
                          double alpha) {
    require_same_length(p, q);
    if (l2_norm(p) == 0.0 || l2_norm(q) == 0.0) {
        throw ValidationError("ZeroVector", "slerp requires both vectors to have nonzero norm");
    }
    require_alpha_in_range(alpha);
    if (alpha == 0.0) return copy_of(p);
    if (alpha == 1.0) return copy_of(q);

    const double theta = angle_between(p, q);
    if (theta < kParallelEps) {
        return lerp(p, q, alpha);
    }
    if (std::numbers::pi - theta < kParallelEps) {
        throw ValidationError("AntipodalVectors",
                              "vectors are opposed (angle within eps of pi); the "
                              "interpolation path is ill-defined");
    }

    const double sin_theta = std::sin(theta);
    const double coeff_p = std::sin((1.0 - alpha) * theta) / sin_theta;
    const double coeff_q = std::sin(alpha * theta) / sin_theta;
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = coeff_p * p[i] + coeff_q * q[i];
    }
    return out;
}

std::vector<double> lerp(std::span<const double> p, std::span<const double> q,
                         double alpha) {
    require_same_length(p, q);
    require_alpha_in_range(alpha);
    if (alpha == 0.0) return copy_of(p);
    if (alpha == 1.0) return copy_of(q);

    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = (1.0 - alpha) * p[i] + alpha * q[i];
    }
    return out;
}

std::vector<double> bcerp(std::span<const double> p, std::span<const double> q,
                          double alpha) {
    require_same_length(p, q);
    require_alpha_in_range(alpha);
    if (alpha == 0.0) return copy_of(p);
    if (alpha == 1.0) return copy_of(q);

    const double one_minus = 1.0 - alpha;
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double control = (p[i] + q[i]) / 2.0;
        out[i] = one_minus * one_minus * p[i] + 2.0 * alpha * one_minus * control +
                 alpha * alpha * q[i];
    }
    return out;
}

std::vector<double> interpolate(std::span<const double> p,
                                std::span<const double> q, double alpha,
                                InterpMethod method) {
    switch (method) {
        case InterpMethod::Slerp: return slerp(p, q, alpha);
        case InterpMethod::Lerp: return lerp(p, q, alpha);
        case InterpMethod::Bcerp: return bcerp(p, q, alpha);
    }
    throw ValidationError("UnknownMethod", "unknown interpolation method tag");
}

namespace {

ParameterVector with_values(const ParameterVector& meta, std::vector<double> values) {
    ParameterVector out;
    out.name = meta.name;
    out.source_dtype = meta.source_dtype;
    out.shape = meta.shape;
    out.values = std::move(values);
    return out;
}

}  // namespace

ParameterVector slerp(const ParameterVector& p, const ParameterVector& q, double alpha) {
    return with_values(p, slerp(std::span(p.values), std::span(q.values), alpha));
}

ParameterVector lerp(const ParameterVector& p, const ParameterVector& q, double alpha) {
    return with_values(p, lerp(std::span(p.values), std::span(q.values), alpha));
}

ParameterVector bcerp(const ParameterVector& p, const ParameterVector& q, double alpha) {
    return with_values(p, bcerp(std::span(p.values), std::span(q.values), alpha));
}

ParameterVector interpolate(const ParameterVector& p, const ParameterVector& q,
                            double alpha, InterpMethod method) {
    return with_values(p, interpolate(std::span(p.values), std::span(q.values), alpha, method));
}

double schedule_alpha(int layer_index, const ScheduleParams& params) {
    params.validate();
    if (layer_index < 0 || layer_index > params.layer_count - 1) {
        throw ValidationError("PositionOutOfRange",
                              "layer index " + std::to_string(layer_index) +
                                  " is outside [0, " + std::to_string(params.layer_count - 1) +
                                  "]");
    }
    const double depth = static_cast<double>(layer_index) / static_cast<double>(params.layer_count);
    return 1.0 / (1.0 + std::exp(-params.steepness * (depth - params.center)));
}

}  // namespace stitch
