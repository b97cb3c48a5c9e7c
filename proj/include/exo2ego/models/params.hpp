// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/matrix.hpp"
#include "exo2ego/tensor/autograd.hpp"

namespace exo2ego::models {

/// Shell-style match: '*' any run (including '.'), '?' one character.
inline bool glob_match(std::string_view pattern, std::string_view s) {
    std::size_t p = 0, i = 0, star = std::string_view::npos, mark = 0;
    while (i < s.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == s[i])) {
            ++p;
            ++i;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = i;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            i = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

inline bool matches_any(const std::vector<std::string>& patterns, std::string_view name) {
    for (const auto& pat : patterns) {
        if (glob_match(pat, name)) {
            return true;
        }
    }
    return false;
}

/// Named leaf parameters in name order.
template <class T>
class ParamStore {
public:
    using Var = ag::Var<T>;

    Var& add(const std::string& name, Matrix<T> init) {
        require(!params_.contains(name), fmt::format("duplicate parameter '{}'", name));
        return params_.emplace(name, Var(std::move(init), false)).first->second;
    }

    bool contains(const std::string& name) const { return params_.contains(name); }

    Var& at(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), fmt::format("unknown parameter '{}'", name));
        return it->second;
    }
    const Var& at(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), fmt::format("unknown parameter '{}'", name));
        return it->second;
    }

    void erase(const std::string& name) { params_.erase(name); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [n, _] : params_) {
            out.push_back(n);
        }
        return out;
    }

    std::vector<std::string> match(const std::vector<std::string>& patterns) const {
        std::vector<std::string> out;
        for (const auto& [n, _] : params_) {
            if (matches_any(patterns, n)) {
                out.push_back(n);
            }
        }
        return out;
    }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : params_) {
            n += static_cast<std::size_t>(v.value().size());
        }
        return n;
    }

    /// requires_grad = name matches `patterns`. Clears stale gradients.
    void set_trainable(const std::vector<std::string>& patterns) {
        for (auto& [n, v] : params_) {
            v.set_requires_grad(matches_any(patterns, n));
            v.zero_grad();
        }
    }

    void zero_grad() {
        for (auto& [_, v] : params_) {
            v.zero_grad();
        }
    }

    /// FNV-1a over (name, shape, raw bytes) of the listed parameters.
    std::string digest(const std::vector<std::string>& which) const {
        Fnv1a h;
        for (const auto& n : which) {
            const auto& m = at(n).value();
            h.update(n);
            const std::int64_t shape[2] = {m.rows(), m.cols()};
            h.update_values(std::span<const std::int64_t>(shape, 2));
            h.update_values(std::span<const T>(m.data(), static_cast<std::size_t>(m.size())));
        }
        return h.hex();
    }
    std::string digest() const { return digest(names()); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Var> params_;
};

}  // namespace exo2ego::models
