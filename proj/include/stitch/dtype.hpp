// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stitch {

// Storage element types supported in checkpoint containers.
enum class Dtype { F64, F32, F16, BF16 };

std::size_t dtype_size(Dtype d);

// Container tag, e.g. "F32". Throws IoError(UnsupportedDtype) for tags
// outside the supported set.
std::string_view dtype_name(Dtype d);
Dtype dtype_from_name(std::string_view name);

// Scalar conversions. The 16-bit decodes are exact; encodes round to
// nearest-even. NaN encodes to a quiet NaN pattern.
double f16_bits_to_f64(std::uint16_t bits);
std::uint16_t f64_to_f16_bits(double v);
double bf16_bits_to_f64(std::uint16_t bits);
std::uint16_t f64_to_bf16_bits(double v);

// Buffer <-> f64 conversions for little-endian raw tensor payloads.
// decode_values expects bytes.size() == count * dtype_size(d).
std::vector<double> decode_values(std::span<const std::byte> bytes, Dtype d);
std::vector<std::byte> encode_values(std::span<const double> values, Dtype d);

}  // namespace stitch
