// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "stitch/errors.hpp"

#include "fs_util.hpp"

// Expects doctest.h to be included by the test file before this header.

namespace testutil {

// Runs fn and checks it throws E with the given code prefix in what().
template <typename E, typename Fn>
void expect_error(Fn&& fn, const std::string& code) {
    try {
        fn();
        FAIL("expected " << code << " but no error was thrown");
    } catch (const E& e) {
        const std::string what = e.what();
        CHECK_MESSAGE(what.rfind(code + ":", 0) == 0, "expected code " << code << ", got: " << what);
    } catch (const std::exception& e) {
        FAIL("expected " << code << " but got a different exception type: " << e.what());
    }
}

}  // namespace testutil
