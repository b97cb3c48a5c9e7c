// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// W x  ->  W x + (alpha / r) B (A x),  A: r x in, B: out x r, B = 0 at wrap.
// Merging folds the adapters back: W' = W + (alpha / r) B A.

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/models/model.hpp"

namespace exo2ego::models {

inline std::string lora_a_name(const std::string& weight) { return "lora." + weight + ".A"; }
inline std::string lora_b_name(const std::string& weight) { return "lora." + weight + ".B"; }

/// Base weights ("*.w", not adapters) selected by the target patterns.
template <class T>
std::vector<std::string> lora_targets(const Model<T>& m, const LoRAConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& name : m.params.match(cfg.targets)) {
        if (name.starts_with("lora.") || !name.ends_with(".w")) {
            continue;
        }
        out.push_back(name);
    }
    return out;
}

/// Attaches adapters; returns the number of scalars added.
template <class T>
std::size_t lora_wrap(Model<T>& m, const LoRAConfig& cfg) {
    cfg.validate();
    require(!m.lora, "model already carries LoRA adapters");
    const auto targets = lora_targets(m, cfg);
    require(!targets.empty(), "LoRA target patterns match no weight matrix");
    std::size_t added = 0;
    for (const auto& w : targets) {
        const auto& base = m.params.at(w).value();
        const Eigen::Index out = base.rows();
        const Eigen::Index in = base.cols();
        m.params.add(lora_a_name(w), detail::normal_matrix<T>(m.cfg.seed, lora_a_name(w), cfg.rank, in,
                                                              1.0 / std::sqrt(static_cast<double>(in))));
        m.params.add(lora_b_name(w), Matrix<T>::Zero(out, cfg.rank));
        added += static_cast<std::size_t>(cfg.rank * (in + out));
    }
    m.lora = cfg;
    return added;
}

/// Folds every adapter into its base weight and removes it.
template <class T>
void lora_merge(Model<T>& m) {
    require(m.lora.has_value(), "model carries no LoRA adapters");
    const T s = static_cast<T>(m.lora->scale());
    for (const auto& name : m.params.names()) {
        if (!name.starts_with("lora.") || !name.ends_with(".A")) {
            continue;
        }
        const std::string w = name.substr(5, name.size() - 7);
        const Matrix<T> delta = s * (m.params.at(lora_b_name(w)).value() * m.params.at(name).value());
        m.params.at(w).mutable_value() += delta;
        m.params.erase(name);
        m.params.erase(lora_b_name(w));
    }
    m.lora.reset();
}

}  // namespace exo2ego::models
