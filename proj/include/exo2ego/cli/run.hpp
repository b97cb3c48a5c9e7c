// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration, run-directory layout and the writer lock.
//
//   <run>/config.json         snapshot of the RunConfig and its hash
//   <run>/.lock               held while a command writes
//   <run>/corpus/             build-clips output
//   <run>/dataset/            synth output
//   <run>/checkpoints/<stage> one checkpoint per trained stage
//   <run>/logs/               per-step NDJSON, LM warm start summary
//   <run>/reports/            per-stage training reports
//   <run>/eval/<stage>/       items, predictions, metrics
//   <run>/report/             tables and plots

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/eval/harness.hpp"
#include "exo2ego/models/config.hpp"
#include "exo2ego/synthworld/dataset_io.hpp"
#include "exo2ego/trainer/stage.hpp"

namespace exo2ego::cli {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "EXO2EGO_OUTPUT_ROOT";

struct RunConfig {
    std::string profile = "toy";
    std::uint64_t seed = 1;  ///< dataset seed; the model seed lives in `model`
    fs::path output_dir;
    synth::SynthConfig synth;
    models::ModelConfig model = [] {
        models::ModelConfig m;
        m.seed = 3;
        return m;
    }();
    models::LoRAConfig lora;
    Json stage_overrides = Json::object();  ///< stage name -> overrides
    eval::EvalProtocol eval;
};

namespace detail {

inline Json model_section(const models::ModelConfig& m) {
    Json j = models::model_config_to_json(m);
    j.erase("vocab");
    j.erase("ego_in");
    j.erase("exo_in");
    return j;
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* n : known) {
            ok = ok || k == n;
        }
        require(ok, fmt::format("{}: unknown key '{}'", where, k));
    }
}

}  // namespace detail

/// Without output_dir, so the hash does not depend on where a run lives.
inline Json run_config_content(const RunConfig& c) {
    return {{"profile", c.profile},
            {"seed", c.seed},
            {"world", synth::world_to_json(c.synth.world)},
            {"synth", {{"episodes", c.synth.episodes}, {"ratios", {c.synth.ratios[0], c.synth.ratios[1], c.synth.ratios[2]}}}},
            {"model", detail::model_section(c.model)},
            {"lora", models::lora_config_to_json(c.lora)},
            {"stage_overrides", c.stage_overrides},
            {"eval", eval::protocol_to_json(c.eval)}};
}

inline std::string config_hash(const RunConfig& c) { return fnv1a_hex(run_config_content(c).dump()); }

inline Json run_config_to_json(const RunConfig& c) {
    Json j = run_config_content(c);
    j["output_dir"] = c.output_dir.string();
    j["config_hash"] = config_hash(c);
    return j;
}

inline trainer::StageOverrides parse_overrides(const Json& j, const std::string& stage) {
    const std::string where = fmt::format("stage_overrides.{}", stage);
    detail::reject_unknown(j, {"lr", "warmup_ratio", "epochs", "batch_size", "weights", "kl_temperature", "grad_clip"}, where);
    trainer::StageOverrides o;
    if (j.contains("lr")) o.lr = j.at("lr").get<double>();
    if (j.contains("warmup_ratio")) o.warmup_ratio = j.at("warmup_ratio").get<double>();
    if (j.contains("epochs")) o.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) o.batch_size = j.at("batch_size").get<int>();
    if (j.contains("kl_temperature")) o.kl_temperature = j.at("kl_temperature").get<double>();
    if (j.contains("grad_clip")) o.grad_clip = j.at("grad_clip").get<double>();
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        detail::reject_unknown(w, {"vtg", "ccl", "kl"}, where + ".weights");
        losses::LossWeights lw = trainer::parse_profile("toy").weights;
        lw.vtg = w.value("vtg", lw.vtg);
        lw.ccl = w.value("ccl", lw.ccl);
        lw.kl = w.value("kl", lw.kl);
        o.weights = lw;
    }
    return o;
}

/// Overrides declared for one stage; empty when none.
inline trainer::StageOverrides overrides_for(const RunConfig& c, trainer::StageId s) {
    const std::string name = trainer::to_string(s);
    if (!c.stage_overrides.contains(name)) {
        return {};
    }
    return parse_overrides(c.stage_overrides.at(name), name);
}

/// Applies the keys present in `j` on top of `base`.
inline RunConfig merge_run_config(RunConfig c, const Json& j) {
    detail::reject_unknown(j, {"profile", "seed", "output_dir", "world", "synth", "model", "lora", "stage_overrides", "eval",
                               "config_hash"},
                           "run config");
    if (j.contains("profile")) c.profile = j.at("profile").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("world")) {
        Json w = synth::world_to_json(c.synth.world);
        w.update(j.at("world"));
        c.synth.world = synth::world_from_json(w);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        detail::reject_unknown(s, {"episodes", "ratios"}, "synth");
        Json cur = synth::synth_to_json(c.synth);
        cur.update(s);
        c.synth = synth::synth_from_json(cur);
    }
    if (j.contains("model")) {
        Json m = models::model_config_to_json(c.model);
        m.update(j.at("model"));
        c.model = models::model_config_from_json(m);
    }
    if (j.contains("lora")) {
        Json l = models::lora_config_to_json(c.lora);
        l.update(j.at("lora"));
        c.lora = models::lora_config_from_json(l);
    }
    if (j.contains("stage_overrides")) {
        for (const auto& [stage, o] : j.at("stage_overrides").items()) {
            (void)parse_overrides(o, trainer::to_string(trainer::parse_stage_id(stage)));
            c.stage_overrides[stage] = o;
        }
    }
    if (j.contains("eval")) {
        Json e = eval::protocol_to_json(c.eval);
        e.update(j.at("eval"));
        c.eval = eval::protocol_from_json(e);
    }
    c.synth.seed = c.seed;
    (void)trainer::parse_profile(c.profile);
    c.synth.world.validate();
    c.lora.validate();
    return c;
}

inline RunConfig run_config_from_json(const Json& j) { return merge_run_config(RunConfig{}, j); }

/// --run if given, else $EXO2EGO_OUTPUT_ROOT/default, else ./runs/default.
inline fs::path resolve_run_dir(const std::string& flag) {
    if (!flag.empty()) {
        return flag;
    }
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
        return fs::path(root) / "default";
    }
    return fs::path("runs") / "default";
}

struct RunPaths {
    fs::path root;

    fs::path config() const { return root / "config.json"; }
    fs::path lock() const { return root / ".lock"; }
    fs::path corpus() const { return root / "corpus"; }
    fs::path dataset() const { return root / "dataset"; }
    fs::path checkpoint(trainer::StageId s) const { return root / "checkpoints" / trainer::to_string(s); }
    fs::path logs() const { return root / "logs"; }
    fs::path reports() const { return root / "reports"; }
    fs::path eval(const std::string& stage) const { return root / "eval" / stage; }
    fs::path report() const { return root / "report"; }
};

/// Exclusive writer lock on a run directory, released on destruction.
class RunLock {
public:
    explicit RunLock(const fs::path& run) : path_(RunPaths{run}.lock()) {
        fs::create_directories(run);
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            require(errno != EEXIST, fmt::format("run directory '{}' is locked by another command (remove {} if it is stale)",
                                                 run.string(), path_.string()));
            throw Error(fmt::format("cannot create lock {}: {}", path_.string(), std::strerror(errno)));
        }
        const std::string pid = fmt::format("{}\n", ::getpid());
        (void)!::write(fd, pid.data(), pid.size());
        ::close(fd);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
};

/// The stored snapshot, or defaults for a fresh run.
inline RunConfig load_run_config(const fs::path& run) {
    const RunPaths p{run};
    RunConfig c;
    if (fs::exists(p.config())) {
        c = run_config_from_json(read_json(p.config()));
    }
    c.output_dir = run;
    return c;
}

/// Writes the snapshot. A run whose stored config hashes differently is
/// only overwritten with force.
inline void store_run_config(const fs::path& run, const RunConfig& c, bool force) {
    const RunPaths p{run};
    if (fs::exists(p.config()) && !force) {
        const Json old = read_json(p.config());
        const std::string old_hash = old.value("config_hash", std::string());
        require(old_hash == config_hash(c),
                fmt::format("run '{}' was configured with hash {}, this invocation resolves to {}; pass --force to "
                            "replace the stored config",
                            run.string(), old_hash, config_hash(c)));
    }
    write_text(p.config(), dump_json(run_config_to_json(c)));
}

}  // namespace exo2ego::cli
