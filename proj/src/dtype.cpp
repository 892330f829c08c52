// SPDX-License-Identifier: Apache-2.0
#include "stitch/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "stitch/errors.hpp"

namespace stitch {

std::size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::F64: return 8;
        case Dtype::F32: return 4;
        case Dtype::F16: return 2;
        case Dtype::BF16: return 2;
    }
    throw ValidationError("UnsupportedDtype", "unknown dtype tag");
}

std::string_view dtype_name(Dtype d) {
    switch (d) {
        case Dtype::F64: return "F64";
        case Dtype::F32: return "F32";
        case Dtype::F16: return "F16";
        case Dtype::BF16: return "BF16";
    }
    throw ValidationError("UnsupportedDtype", "unknown dtype tag");
}

Dtype dtype_from_name(std::string_view name) {
    if (name == "F64") return Dtype::F64;
    if (name == "F32") return Dtype::F32;
    if (name == "F16") return Dtype::F16;
    if (name == "BF16") return Dtype::BF16;
    throw IoError("UnsupportedDtype", "dtype '" + std::string(name) + "' is not supported");
}

double f16_bits_to_f64(std::uint16_t bits) {
    const unsigned sign = bits >> 15;
    const unsigned exponent = (bits >> 10) & 0x1F;
    const unsigned mantissa = bits & 0x3FF;

    double v;
    if (exponent == 0) {
        v = std::ldexp(static_cast<double>(mantissa), -24);
    } else if (exponent == 31) {
        v = mantissa ? std::numeric_limits<double>::quiet_NaN()
                     : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(mantissa | 0x400), static_cast<int>(exponent) - 25);
    }
    return sign ? -v : v;
}

namespace {

// Round-to-nearest-even float -> half, the classic bit-twiddled routine.
std::uint16_t f32_bits_to_f16_bits(std::uint32_t f) {
    const std::uint32_t f32_infinity = 255u << 23;
    const std::uint32_t f16_max = (127u + 16u) << 23;       // first value rounding past half range
    const std::uint32_t denorm_magic = ((127u - 15u) + (23u - 10u) + 1u) << 23;
    const std::uint32_t sign = f & 0x80000000u;
    f ^= sign;

    std::uint16_t out;
    if (f >= f16_max) {
        out = (f > f32_infinity) ? 0x7E00 : 0x7C00;  // NaN or infinity
    } else if (f < (113u << 23)) {
        // Subnormal half: renormalize through a float add so the hardware
        // does the rounding.
        const float shifted = std::bit_cast<float>(f) + std::bit_cast<float>(denorm_magic);
        out = static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(shifted) - denorm_magic);
    } else {
        const std::uint32_t mantissa_odd = (f >> 13) & 1u;
        f += (static_cast<std::uint32_t>(15u - 127u) << 23) + 0xFFFu;
        f += mantissa_odd;
        out = static_cast<std::uint16_t>(f >> 13);
    }
    return static_cast<std::uint16_t>(out | (sign >> 16));
}

}  // namespace

std::uint16_t f64_to_f16_bits(double v) {
    return f32_bits_to_f16_bits(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

double bf16_bits_to_f64(std::uint16_t bits) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t f64_to_bf16_bits(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    if (std::isnan(f)) {
        return static_cast<std::uint16_t>((x >> 16) | 0x0040);  // keep sign, force quiet
    }
    const std::uint32_t rounding = 0x7FFFu + ((x >> 16) & 1u);
    x += rounding;
    return static_cast<std::uint16_t>(x >> 16);
}

std::vector<double> decode_values(std::span<const std::byte> bytes, Dtype d) {
    const std::size_t elem = dtype_size(d);
    if (bytes.size() % elem != 0) {
        throw IoError("TruncatedData", "payload size is not a multiple of the element size");
    }
    const std::size_t count = bytes.size() / elem;
    std::vector<double> out(count);

    switch (d) {
        case Dtype::F64:
            std::memcpy(out.data(), bytes.data(), bytes.size());
            break;
        case Dtype::F32:
            for (std::size_t i = 0; i < count; ++i) {
                float f;
                std::memcpy(&f, bytes.data() + i * 4, 4);
                out[i] = static_cast<double>(f);
            }
            break;
        case Dtype::F16:
            for (std::size_t i = 0; i < count; ++i) {
                std::uint16_t h;
                std::memcpy(&h, bytes.data() + i * 2, 2);
                out[i] = f16_bits_to_f64(h);
            }
            break;
        case Dtype::BF16:
            for (std::size_t i = 0; i < count; ++i) {
                std::uint16_t h;
                std::memcpy(&h, bytes.data() + i * 2, 2);
                out[i] = bf16_bits_to_f64(h);
            }
            break;
    }
    return out;
}

std::vector<std::byte> encode_values(std::span<const double> values, Dtype d) {
    std::vector<std::byte> out(values.size() * dtype_size(d));

    switch (d) {
        case Dtype::F64:
            std::memcpy(out.data(), values.data(), out.size());
            break;
        case Dtype::F32:
            for (std::size_t i = 0; i < values.size(); ++i) {
                const float f = static_cast<float>(values[i]);
                std::memcpy(out.data() + i * 4, &f, 4);
            }
            break;
        case Dtype::F16:
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::uint16_t h = f64_to_f16_bits(values[i]);
                std::memcpy(out.data() + i * 2, &h, 2);
            }
            break;
        case Dtype::BF16:
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::uint16_t h = f64_to_bf16_bits(values[i]);
                std::memcpy(out.data() + i * 2, &h, 2);
            }
            break;
    }
    return out;
}

}  // namespace stitch
