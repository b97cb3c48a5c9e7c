// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint directories:
//
//   manifest.json          stage, step, config hash, seed, lineage, model and
//                          LoRA config, one entry per array with its FNV-1a hash
//   params/<name>.e2a      one array per named parameter
//   optim/<name>.m.e2a     AdamW moments of the last stage's trainable set
//   optim/<name>.v.e2a
//
// Every file listed in the manifest is hashed on load; a mismatch is reported
// as a corrupt checkpoint.

#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/array_io.hpp"
#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/models/lora.hpp"
#include "exo2ego/trainer/pipeline.hpp"

namespace exo2ego::trainer {

inline constexpr const char* kCheckpointSchema = "exo2ego-checkpoint/1";

namespace detail {

inline std::string bytes_hash(const std::vector<char>& bytes) {
    Fnv1a h;
    h.update(std::as_bytes(std::span(bytes.data(), bytes.size())));
    return h.hex();
}

inline std::vector<char> read_checked(const std::filesystem::path& dir, const Json& entry, const std::string& what) {
    const auto rel = entry.at("file").get<std::string>();
    const auto path = dir / rel;
    require(std::filesystem::exists(path), fmt::format("checkpoint is missing {} file '{}'", what, rel));
    auto bytes = read_bytes(path);
    require(bytes_hash(bytes) == entry.at("hash").get<std::string>(),
            fmt::format("corrupt checkpoint: hash mismatch in '{}'", rel));
    return bytes;
}

}  // namespace detail

struct CheckpointInfo {
    std::string stage;  ///< last stage run, "" before init
    std::uint64_t seed = 0;
    std::string profile;
    std::string ablation = "none";
};

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const TrainState<T>& st, const CheckpointInfo& info) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "params");
    fs::create_directories(dir / "optim");
    const auto& m = st.model;

    Json params = Json::array();
    for (const auto& name : m.params.names()) {
        const auto rel = fmt::format("params/{}.e2a", name);
        const auto bytes = encode_array<T>(m.params.at(name).value(), {{"name", name}});
        write_bytes(dir / rel, bytes);
        const auto& v = m.params.at(name).value();
        params.push_back({{"name", name}, {"file", rel}, {"shape", {v.rows(), v.cols()}}, {"hash", detail::bytes_hash(bytes)}});
    }

    Json moments = Json::array();
    for (const auto& [name, mv] : st.opt.moments) {
        Json e = {{"name", name}};
        for (const auto& [key, mat] : {std::pair{"m", &mv.m}, std::pair{"v", &mv.v}}) {
            const auto rel = fmt::format("optim/{}.{}.e2a", name, key);
            const auto bytes = encode_array<T>(*mat, {{"name", name}, {"moment", key}});
            write_bytes(dir / rel, bytes);
            e[key] = {{"file", rel}, {"hash", detail::bytes_hash(bytes)}};
        }
        moments.push_back(std::move(e));
    }

    Json manifest = {{"schema", kCheckpointSchema},
                     {"stage", info.stage},
                     {"step", st.global_step},
                     {"config_hash", st.config_hash},
                     {"seed", info.seed},
                     {"profile", info.profile},
                     {"ablation", info.ablation},
                     {"lineage", st.lineage},
                     {"skipped", st.skipped},
                     {"lm_warm_started", st.lm_warm_started},
                     {"dtype", exo2ego::detail::dtype_name<T>()},
                     {"model", models::model_config_to_json(m.cfg)},
                     {"lora_plan", models::lora_config_to_json(st.lora_plan)},
                     {"lora_attached", m.lora.has_value()},
                     {"parameter_names", m.params.names()},
                     {"parameters", std::move(params)},
                     {"optimizer",
                      {{"step", st.opt.step},
                       {"beta1", st.opt.hyper.beta1},
                       {"beta2", st.opt.hyper.beta2},
                       {"weight_decay", st.opt.hyper.weight_decay},
                       {"eps", st.opt.hyper.eps},
                       {"moments", std::move(moments)}}}};
    write_text(dir / "manifest.json", dump_json(manifest));
}

inline Json read_checkpoint_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    require(std::filesystem::exists(path), fmt::format("no checkpoint at '{}' (manifest.json missing)", dir.string()));
    Json j = read_json(path);
    require(j.value("schema", std::string()) == kCheckpointSchema,
            fmt::format("'{}' is not a checkpoint (schema {})", path.string(), j.value("schema", std::string("?"))));
    return j;
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr) {
    const Json j = read_checkpoint_manifest(dir);
    TrainState<T> st{models::init_model<T>(models::model_config_from_json(j.at("model")))};
    st.lora_plan = models::lora_config_from_json(j.at("lora_plan"));
    if (j.at("lora_attached").get<bool>()) {
        models::lora_wrap(st.model, st.lora_plan);
    }
    auto& ps = st.model.params;
    const auto expected = j.at("parameter_names").get<std::vector<std::string>>();
    require(expected == ps.names(), "corrupt checkpoint: parameter list does not match the model config");
    for (const auto& e : j.at("parameters")) {
        const auto name = e.at("name").get<std::string>();
        const auto rel = e.at("file").get<std::string>();
        require(std::filesystem::exists(dir / rel), fmt::format("checkpoint is missing parameter '{}' ({})", name, rel));
        const auto bytes = detail::read_checked(dir, e, "parameter");
        Matrix<T> v = decode_array<T>(bytes, nullptr, rel);
        auto& dst = ps.at(name).mutable_value();
        require(v.rows() == dst.rows() && v.cols() == dst.cols(),
                fmt::format("corrupt checkpoint: parameter '{}' has shape {}x{}, expected {}x{}", name, v.rows(),
                            v.cols(), dst.rows(), dst.cols()));
        dst = std::move(v);
    }
    for (const auto& name : expected) {
        bool found = false;
        for (const auto& e : j.at("parameters")) {
            found = found || e.at("name").get<std::string>() == name;
        }
        require(found, fmt::format("checkpoint is missing parameter '{}'", name));
    }

    const auto& o = j.at("optimizer");
    st.opt.step = o.at("step").get<long>();
    st.opt.hyper = {o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("weight_decay").get<double>(),
                    o.at("eps").get<double>()};
    for (const auto& e : o.at("moments")) {
        const auto name = e.at("name").get<std::string>();
        Moments<T> mv;
        mv.m = decode_array<T>(detail::read_checked(dir, e.at("m"), "moment"), nullptr, name);
        mv.v = decode_array<T>(detail::read_checked(dir, e.at("v"), "moment"), nullptr, name);
        st.opt.moments.emplace(name, std::move(mv));
    }

    st.lineage = j.at("lineage").get<std::vector<std::string>>();
    st.skipped = j.at("skipped").get<std::vector<std::string>>();
    st.config_hash = j.at("config_hash").get<std::string>();
    st.global_step = j.at("step").get<long>();
    st.lm_warm_started = j.at("lm_warm_started").get<bool>();
    if (info != nullptr) {
        info->stage = j.at("stage").get<std::string>();
        info->seed = j.at("seed").get<std::uint64_t>();
        info->profile = j.at("profile").get<std::string>();
        info->ablation = j.at("ablation").get<std::string>();
    }
    return st;
}

}  // namespace exo2ego::trainer
