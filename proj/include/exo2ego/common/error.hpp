// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace exo2ego {

/// Raised for invalid inputs or configuration. Maps to CLI exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an internal contract is broken (e.g. a frozen parameter moved).
/// Maps to CLI exit code 2.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& message) {
    if (!cond) {
        throw Error(message);
    }
}

inline void ensure(bool cond, const std::string& message) {
    if (!cond) {
        throw InvariantViolation(message);
    }
}

}  // namespace exo2ego
