// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stitch {

// All errors carry a stable code string ("DimensionMismatch", "TruncatedData", ...)
// so callers and scripts can match on the first token of what().
class Error : public std::runtime_error {
public:
    Error(std::string_view code, const std::string& message)
        : std::runtime_error(std::string(code) + ": " + message), code_(code) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Bad inputs, bad plans, bad configs. CLI exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Unreadable, unwritable, or malformed files. CLI exit code 2.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace stitch
