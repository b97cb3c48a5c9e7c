// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"

namespace exo2ego::models {

enum class MappingKind { residual, fc };

inline const char* to_string(MappingKind k) { return k == MappingKind::fc ? "fc" : "residual"; }

inline MappingKind parse_mapping_kind(const std::string& s) {
    if (s == "fc") {
        return MappingKind::fc;
    }
    require(s == "residual", fmt::format("unknown mapping kind '{}'", s));
    return MappingKind::residual;
}

struct ModelConfig {
    int ego_in = 32;  ///< ego frame width
    int exo_in = 32;  ///< exo frame width
    int d = 64;       ///< feature width shared by encoders, F/G and the LM
    int enc_blocks = 2;
    MappingKind mapping = MappingKind::residual;
    int map_blocks = 9;
    int map_hidden = 0;  ///< 0 means d / 2
    int lm_blocks = 2;
    int lm_heads = 2;
    int lm_mlp_mult = 2;
    int lm_max_len = 64;
    double lm_embed_std = 0.1;
    std::vector<std::string> vocab;  ///< full word list, specials first
    std::uint64_t seed = 1;

    int hidden() const { return map_hidden > 0 ? map_hidden : d / 2; }

    void validate() const {
        require(ego_in > 0 && exo_in > 0, "frame widths must be positive");
        require(d >= 2 && d % 2 == 0, "d must be a positive even number");
        require(enc_blocks >= 0 && map_blocks >= 0 && lm_blocks >= 1, "block counts out of range");
        require(lm_heads >= 1 && d % lm_heads == 0, fmt::format("d = {} not divisible by {} heads", d, lm_heads));
        require(lm_max_len >= 2, "lm_max_len too small");
        require(vocab.size() >= 3, "vocabulary is empty");
    }
};

/// Low-rank adapters on LM matrices. Targets are glob patterns over weight
/// names; the adapter of "<w>" is stored as "lora.<w>.A" (rank x in) and
/// "lora.<w>.B" (out x rank).
struct LoRAConfig {
    int rank = 4;
    double alpha = 8.0;
    double dropout = 0.0;
    std::vector<std::string> targets{"lm.block*.attn.w*.w", "lm.block*.mlp.fc*.w"};

    double scale() const { return alpha / rank; }

    static LoRAConfig reference() {
        LoRAConfig c;
        c.rank = 128;
        c.alpha = 256.0;
        c.dropout = 0.1;
        return c;
    }

    void validate() const {
        require(rank >= 1, "LoRA rank must be positive");
        require(alpha > 0.0, "LoRA alpha must be positive");
        require(dropout >= 0.0 && dropout < 1.0, "LoRA dropout must be in [0, 1)");
        require(!targets.empty(), "LoRA needs at least one target pattern");
    }
};

inline Json model_config_to_json(const ModelConfig& c) {
    return {{"ego_in", c.ego_in},       {"exo_in", c.exo_in},          {"d", c.d},
            {"enc_blocks", c.enc_blocks}, {"mapping", to_string(c.mapping)}, {"map_blocks", c.map_blocks},
            {"map_hidden", c.map_hidden}, {"lm_blocks", c.lm_blocks},   {"lm_heads", c.lm_heads},
            {"lm_mlp_mult", c.lm_mlp_mult}, {"lm_max_len", c.lm_max_len}, {"lm_embed_std", c.lm_embed_std},
            {"vocab", c.vocab},           {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    c.ego_in = j.value("ego_in", c.ego_in);
    c.exo_in = j.value("exo_in", c.exo_in);
    c.d = j.value("d", c.d);
    c.enc_blocks = j.value("enc_blocks", c.enc_blocks);
    c.mapping = parse_mapping_kind(j.value("mapping", std::string("residual")));
    c.map_blocks = j.value("map_blocks", c.map_blocks);
    c.map_hidden = j.value("map_hidden", c.map_hidden);
    c.lm_blocks = j.value("lm_blocks", c.lm_blocks);
    c.lm_heads = j.value("lm_heads", c.lm_heads);
    c.lm_mlp_mult = j.value("lm_mlp_mult", c.lm_mlp_mult);
    c.lm_max_len = j.value("lm_max_len", c.lm_max_len);
    c.lm_embed_std = j.value("lm_embed_std", c.lm_embed_std);
    c.vocab = j.value("vocab", std::vector<std::string>{});
    c.seed = j.value("seed", c.seed);
    return c;
}

inline Json lora_config_to_json(const LoRAConfig& c) {
    return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"targets", c.targets}};
}

inline LoRAConfig lora_config_from_json(const Json& j) {
    LoRAConfig c;
    c.rank = j.value("rank", c.rank);
    c.alpha = j.value("alpha", c.alpha);
    c.dropout = j.value("dropout", c.dropout);
    c.targets = j.value("targets", c.targets);
    c.validate();
    return c;
}

}  // namespace exo2ego::models
