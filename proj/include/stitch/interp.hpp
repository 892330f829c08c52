// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stitch/dtype.hpp"

namespace stitch {

// Angles below this are treated as parallel: slerp's 1/sin(theta) is unstable
// there and the spherical path degenerates to the chord, so we fall back to
// lerp. An angle within eps of pi is an error instead (no defined path).
inline constexpr double kParallelEps = 1e-7;

// A flattened view of one named weight tensor; the unit of interpolation.
// Values are always held in 64-bit precision regardless of storage dtype.
struct ParameterVector {
    std::string name;
    std::vector<double> values;
    Dtype source_dtype = Dtype::F32;
    std::vector<std::int64_t> shape;

    std::int64_t numel() const;
};

enum class InterpMethod { Slerp, Lerp, Bcerp };

std::string_view method_name(InterpMethod m);
InterpMethod method_from_name(std::string_view name);

// Sigmoid schedule constants: alpha(i) = 1 / (1 + exp(-k * (i/N - c))).
struct ScheduleParams {
    double steepness = 4.0;   // k
    double center = 0.375;    // c
    int layer_count = 32;     // N, the pre-insertion depth

    void validate() const;
};

// Angle between the directions of p and q, in [0, pi]. Both vectors are
// L2-normalized and the dot product is clamped to [-1, 1] before arccos.
double angle_between(std::span<const double> p, std::span<const double> q);

// Non-throwing variant used for reporting: empty when either vector has zero
// norm or the lengths differ.
std::optional<double> try_angle_between(std::span<const double> p,
                                        std::span<const double> q);

// Spherical interpolation: [sin((1-a)*theta)*p + sin(a*theta)*q] / sin(theta),
// with theta measured between normalized directions and the coefficients
// applied to the raw vectors. a=0 and a=1 return exact copies. Near-parallel
// inputs fall back to lerp; near-antipodal inputs are an error.
std::vector<double> slerp(std::span<const double> p, std::span<const double> q,
                          double alpha);

// (1-a)*p + a*q elementwise. a=0 and a=1 return exact copies.
std::vector<double> lerp(std::span<const double> p, std::span<const double> q,
                         double alpha);

// Quadratic Bezier with midpoint control h=(p+q)/2, evaluated literally as
// (1-a)^2*p + 2a(1-a)*h + a^2*q. Collapses to lerp algebraically; kept as
// written so the collapse stays a testable identity rather than a shortcut.
std::vector<double> bcerp(std::span<const double> p, std::span<const double> q,
                          double alpha);

std::vector<double> interpolate(std::span<const double> p,
                                std::span<const double> q, double alpha,
                                InterpMethod method);

// ParameterVector wrappers; metadata (name, dtype, shape) is taken from p.
ParameterVector slerp(const ParameterVector& p, const ParameterVector& q, double alpha);
ParameterVector lerp(const ParameterVector& p, const ParameterVector& q, double alpha);
ParameterVector bcerp(const ParameterVector& p, const ParameterVector& q, double alpha);
ParameterVector interpolate(const ParameterVector& p, const ParameterVector& q,
                            double alpha, InterpMethod method);

// Interpolation ratio for an insertion at pre-insertion index layer_index,
// 0 <= layer_index <= N-1. Strictly increasing in the index, always in (0,1).
double schedule_alpha(int layer_index, const ScheduleParams& params);

}  // namespace stitch
