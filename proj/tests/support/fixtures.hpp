// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "exo2ego/models/model.hpp"
#include "support/gradcheck.hpp"

namespace exo2ego::testing {

inline std::vector<std::string> tiny_vocab() {
    return {"<bos>", "<eos>", "<sep>", "c", "picks", "up", "the", "cup", "knife", "opens", "drawer", "describe"};
}

inline models::ModelConfig tiny_model_config() {
    models::ModelConfig c;
    c.ego_in = 12;
    c.exo_in = 10;
    c.d = 8;
    c.enc_blocks = 2;
    c.map_blocks = 9;
    c.lm_blocks = 2;
    c.lm_heads = 2;
    c.lm_max_len = 48;
    c.lm_embed_std = 0.5;
    c.vocab = tiny_vocab();
    c.seed = 17;
    return c;
}

/// Every parameter of the model as a gradient-check leaf, requires_grad on.
template <class T>
std::vector<NamedLeaf> all_leaves(models::Model<T>& m) {
    std::vector<NamedLeaf> out;
    for (auto& [name, v] : m.params) {
        v.set_requires_grad(true);
        out.push_back({name, v});
    }
    return out;
}

/// Leaves whose names match any pattern.
inline std::vector<NamedLeaf> leaves_matching(models::Model<double>& m, const std::vector<std::string>& patterns) {
    std::vector<NamedLeaf> out;
    for (auto& [name, v] : m.params) {
        const bool on = models::matches_any(patterns, name);
        v.set_requires_grad(on);
        if (on) {
            out.push_back({name, v});
        }
    }
    return out;
}

/// Perturbs every parameter so zero-initialised biases and gains carry
/// signal in gradient checks.
template <class T>
void jitter_params(models::Model<T>& m, std::uint64_t seed, double scale = 0.1) {
    Rng rng(seed);
    for (auto& [_, v] : m.params) {
        auto& x = v.mutable_value();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] += static_cast<T>(scale * rng.normal());
        }
    }
}

}  // namespace exo2ego::testing
