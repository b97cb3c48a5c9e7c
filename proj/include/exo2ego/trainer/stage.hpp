// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Stage plans: which parameters move, which losses are on and the
// optimisation hyperparameters of each phase.
//
//   stage  trainable                       loss
//   init   enc_ego, enc_exo                vtg (single-view prefixes)
//   s1     enc_exo                         vtg (exo prefix)
//   s2     enc_ego, map_f, map_g           vtg + ccl (both ways) + kl
//   s3     lora, enc_ego, map_f            vtg (instruction prompts)
//
// Everything not trainable is frozen; the base LM is frozen throughout.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/losses/losses.hpp"
#include "exo2ego/models/config.hpp"
#include "exo2ego/models/params.hpp"

namespace exo2ego::trainer {

enum class StageId { init, s1, s2, s3 };

inline constexpr std::array<StageId, 4> kAllStages = {StageId::init, StageId::s1, StageId::s2, StageId::s3};

inline const char* to_string(StageId s) {
    switch (s) {
        case StageId::init:
            return "init";
        case StageId::s1:
            return "s1";
        case StageId::s2:
            return "s2";
        case StageId::s3:
            return "s3";
    }
    return "?";
}

inline StageId parse_stage_id(const std::string& s) {
    for (StageId id : kAllStages) {
        if (s == to_string(id)) {
            return id;
        }
    }
    throw Error(fmt::format("unknown stage '{}' (expected init, s1, s2 or s3)", s));
}

inline int stage_index(StageId s) { return static_cast<int>(s); }

/// Global batch, peak lr, warmup ratio and epochs of the reference setup.
struct Hyper {
    int batch = 0;
    double lr = 0.0;
    double warmup = 0.0;
    int epochs = 0;

    bool operator==(const Hyper&) const = default;
};

inline Hyper reference_hyper(StageId s) {
    switch (s) {
        case StageId::init:
            return {512, 1e-3, 0.1, 5};
        case StageId::s1:
        case StageId::s2:
            return {256, 1e-4, 0.03, 2};
        case StageId::s3:
            return {64, 2e-5, 0.03, 1};
    }
    return {};
}

/// Per-stage hyperparameters and loss weights of a run profile. The toy
/// table trades batch size for epochs so every stage finishes in seconds on
/// the synthetic world; the reference values ride along in StageConfig.
struct Profile {
    std::string name = "toy";
    std::array<Hyper, 4> hyper{};
    losses::LossWeights weights;
    int lm_warmup_epochs = 0;  ///< text-only LM warm start before init
    int lm_warmup_batch = 32;
    double lm_warmup_lr = 3e-3;

    const Hyper& at(StageId s) const { return hyper[static_cast<std::size_t>(stage_index(s))]; }

    static Profile paper_default() {
        Profile p;
        p.name = "paper-default";
        for (StageId s : kAllStages) {
            p.hyper[static_cast<std::size_t>(stage_index(s))] = reference_hyper(s);
        }
        p.lm_warmup_epochs = 20;
        return p;
    }

    static Profile toy() {
        Profile p;
        p.name = "toy";
        p.hyper = {Hyper{32, 1e-3, 0.1, 20}, Hyper{16, 1e-4, 0.03, 8}, Hyper{16, 3e-3, 0.03, 48},
                   Hyper{4, 2e-4, 0.03, 4}};
        p.weights = {1.0, 1.0, 300.0};
        p.lm_warmup_epochs = 20;
        return p;
    }

    bool operator==(const Profile&) const = default;
};

inline Profile parse_profile(const std::string& s) {
    if (s == "toy") {
        return Profile::toy();
    }
    require(s == "paper-default", fmt::format("unknown profile '{}' (expected toy or paper-default)", s));
    return Profile::paper_default();
}

inline const std::vector<std::string>& ablation_names() {
    static const std::vector<std::string> names = {"none",        "fwd-only-ccl",  "no-ccl",        "no-kl",
                                                   "fc-mapping",  "no-lora",       "exo-trainable", "frozen-ego-s3",
                                                   "no-vtg-s2"};
    return names;
}

inline void check_ablation(const std::string& a) {
    for (const auto& n : ablation_names()) {
        if (n == a) {
            return;
        }
    }
    throw Error(fmt::format("unknown ablation preset '{}'", a));
}

struct StageConfig {
    StageId stage = StageId::init;
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;
    losses::LossSpec losses;
    double lr = 1e-3;
    double warmup_ratio = 0.0;
    int epochs = 1;
    int batch_size = 1;
    double grad_clip = 1.0;  ///< global L2 norm; 0 disables
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.02;
    double eps = 1e-8;
    bool use_lora = false;
    bool use_instructions = false;  ///< prompts drawn from the instruction bank
    std::string dataset_ref;
    std::uint64_t seed = 1;
    std::string profile = "toy";
    std::string ablation = "none";
    Hyper reference;  ///< reference values for this stage
};

/// Optional replacements for stage_plan defaults.
struct StageOverrides {
    std::optional<double> lr;
    std::optional<double> warmup_ratio;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<losses::LossWeights> weights;
    std::optional<double> kl_temperature;
    std::optional<double> grad_clip;
    std::optional<std::vector<std::string>> trainable;
    std::optional<std::vector<std::string>> frozen;
};

namespace detail {

inline std::vector<std::string> without(std::vector<std::string> v, const std::string& x) {
    std::erase(v, x);
    return v;
}

}  // namespace detail

/// Two pattern lists overlap when some pattern of one matches a pattern of
/// the other read as a literal name.
inline void check_disjoint(const std::vector<std::string>& trainable, const std::vector<std::string>& frozen) {
    for (const auto& a : trainable) {
        for (const auto& b : frozen) {
            require(!models::glob_match(a, b) && !models::glob_match(b, a),
                    fmt::format("parameter patterns overlap: '{}' is both trainable and frozen ('{}')", a, b));
        }
    }
}

inline void validate(const StageConfig& c) {
    require(c.lr > 0.0 && std::isfinite(c.lr), "lr must be positive");
    require(c.warmup_ratio >= 0.0 && c.warmup_ratio < 1.0, "warmup_ratio must be in [0, 1)");
    require(c.epochs >= 1, "epochs must be positive");
    require(c.batch_size >= 1, "batch_size must be positive");
    require(c.grad_clip >= 0.0, "grad_clip must be non-negative");
    require(c.losses.kl_temperature > 0.0, "kl temperature must be positive");
    check_disjoint(c.trainable, c.frozen);
}

inline StageConfig stage_plan(StageId stage, const Profile& profile = Profile::toy(),
                              const std::string& ablation = "none", const StageOverrides& ov = {}) {
    check_ablation(ablation);
    StageConfig c;
    c.stage = stage;
    c.profile = profile.name;
    c.ablation = ablation;
    c.reference = reference_hyper(stage);
    const Hyper& h = profile.at(stage);
    c.lr = h.lr;
    c.warmup_ratio = h.warmup;
    c.epochs = h.epochs;
    c.batch_size = h.batch;

    c.losses.weights = profile.weights;
    auto& a = c.losses.active;
    a = {true, false, false, false};
    switch (stage) {
        case StageId::init:
            c.trainable = {"enc_ego.*", "enc_exo.*"};
            c.frozen = {"map_f.*", "map_g.*", "lm.*", "lora.*"};
            break;
        case StageId::s1:
            c.trainable = {"enc_exo.*"};
            c.frozen = {"enc_ego.*", "map_f.*", "map_g.*", "lm.*", "lora.*"};
            break;
        case StageId::s2:
            c.trainable = {"enc_ego.*", "map_f.*", "map_g.*"};
            c.frozen = {"enc_exo.*", "lm.*", "lora.*"};
            a = {true, true, true, true};
            break;
        case StageId::s3:
            c.trainable = {"lora.*", "enc_ego.*", "map_f.*"};
            c.frozen = {"enc_exo.*", "map_g.*", "lm.*"};
            c.use_lora = true;
            c.use_instructions = true;
            break;
    }

    if (stage == StageId::s2) {
        if (ablation == "fwd-only-ccl") {
            a.ccl_backward = false;
        } else if (ablation == "no-ccl") {
            a.ccl_forward = false;
            a.ccl_backward = false;
        } else if (ablation == "no-kl") {
            a.kl = false;
        } else if (ablation == "no-vtg-s2") {
            a.vtg = false;
        } else if (ablation == "exo-trainable") {
            c.trainable.push_back("enc_exo.*");
            c.frozen = detail::without(c.frozen, "enc_exo.*");
        }
    }
    if (stage == StageId::s3) {
        if (ablation == "no-lora") {
            c.use_lora = false;
            c.trainable = detail::without(c.trainable, "lora.*");
            c.frozen.push_back("lora.*");
        } else if (ablation == "frozen-ego-s3") {
            c.trainable = detail::without(c.trainable, "enc_ego.*");
            c.frozen.push_back("enc_ego.*");
        }
    }

    if (ov.lr) c.lr = *ov.lr;
    if (ov.warmup_ratio) c.warmup_ratio = *ov.warmup_ratio;
    if (ov.epochs) c.epochs = *ov.epochs;
    if (ov.batch_size) c.batch_size = *ov.batch_size;
    if (ov.weights) c.losses.weights = *ov.weights;
    if (ov.kl_temperature) c.losses.kl_temperature = *ov.kl_temperature;
    if (ov.grad_clip) c.grad_clip = *ov.grad_clip;
    if (ov.trainable) c.trainable = *ov.trainable;
    if (ov.frozen) c.frozen = *ov.frozen;
    validate(c);
    return c;
}

/// Every name must fall on exactly one side of the partition.
inline void check_partition(const StageConfig& c, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        const bool t = models::matches_any(c.trainable, n);
        const bool f = models::matches_any(c.frozen, n);
        require(!(t && f), fmt::format("parameter '{}' is both trainable and frozen", n));
        require(t || f, fmt::format("parameter '{}' is neither trainable nor frozen", n));
    }
}

/// Linear warmup to cfg.lr over warmup_ratio * total steps, then cosine
/// decay to 0 at total_steps.
inline double lr_at(long step, long total_steps, const StageConfig& cfg) {
    require(total_steps > 0, "lr_at: total_steps must be positive");
    require(step >= 0 && step <= total_steps, fmt::format("lr_at: step {} outside [0, {}]", step, total_steps));
    const double warm = cfg.warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (s < warm) {
        return cfg.lr * s / warm;
    }
    const double span = static_cast<double>(total_steps) - warm;
    const double progress = span > 0.0 ? (s - warm) / span : 1.0;
    return std::max(0.0, cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

inline Json weights_to_json(const losses::LossWeights& w) { return {{"vtg", w.vtg}, {"ccl", w.ccl}, {"kl", w.kl}}; }

inline Json hyper_to_json(const Hyper& h) {
    return {{"batch", h.batch}, {"lr", h.lr}, {"warmup", h.warmup}, {"epochs", h.epochs}};
}

inline Json profile_to_json(const Profile& p) {
    Json stages = Json::object();
    for (StageId s : kAllStages) {
        stages[to_string(s)] = hyper_to_json(p.at(s));
    }
    return {{"name", p.name},
            {"stages", stages},
            {"weights", weights_to_json(p.weights)},
            {"lm_warmup", {{"epochs", p.lm_warmup_epochs}, {"batch", p.lm_warmup_batch}, {"lr", p.lm_warmup_lr}}}};
}

inline Json stage_config_to_json(const StageConfig& c) {
    const auto& a = c.losses.active;
    return {{"stage", to_string(c.stage)},
            {"trainable", c.trainable},
            {"frozen", c.frozen},
            {"losses",
             {{"active", {{"vtg", a.vtg}, {"ccl_forward", a.ccl_forward}, {"ccl_backward", a.ccl_backward}, {"kl", a.kl}}},
              {"weights", weights_to_json(c.losses.weights)},
              {"kl_temperature", c.losses.kl_temperature}}},
            {"lr", c.lr},
            {"warmup_ratio", c.warmup_ratio},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"grad_clip", c.grad_clip},
            {"optimizer", {{"beta1", c.beta1}, {"beta2", c.beta2}, {"weight_decay", c.weight_decay}, {"eps", c.eps}}},
            {"use_lora", c.use_lora},
            {"use_instructions", c.use_instructions},
            {"dataset_ref", c.dataset_ref},
            {"seed", c.seed},
            {"profile", c.profile},
            {"ablation", c.ablation},
            {"reference", hyper_to_json(c.reference)}};
}

}  // namespace exo2ego::trainer
