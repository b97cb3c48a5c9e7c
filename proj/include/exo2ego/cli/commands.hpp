// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Command implementations behind the exo2ego tool. Each one writes only
// inside its run directory and reports progress on `out`.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "exo2ego/cli/report.hpp"
#include "exo2ego/cli/run.hpp"
#include "exo2ego/corpus/manifest.hpp"
#include "exo2ego/corpus/stats.hpp"
#include "exo2ego/eval/harness.hpp"
#include "exo2ego/synthworld/dataset_io.hpp"
#include "exo2ego/trainer/checkpoint.hpp"
#include "exo2ego/trainer/pipeline.hpp"

namespace exo2ego::cli {

using trainer::StageId;

namespace detail {

inline bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

inline void reset_dir(const fs::path& p, bool force, const std::string& what) {
    if (non_empty_dir(p)) {
        require(force, fmt::format("{} '{}' already exists and is not empty; pass --force to overwrite", what, p.string()));
        fs::remove_all(p);
    }
    fs::create_directories(p);
}

/// Narration tracks from one file: a track object, an array of tracks, or
/// an object with a "tracks" array.
inline std::vector<corpus::NarrationTrack> read_tracks(const fs::path& file) {
    const Json j = read_json(file);
    std::vector<corpus::NarrationTrack> out;
    auto one = [&](const Json& t, std::size_t k) {
        try {
            auto track = corpus::track_from_json(t);
            corpus::validate_track(track, /*allow_duplicates=*/true);
            out.push_back(std::move(track));
        } catch (const std::exception& e) {
            throw Error(fmt::format("{}: track {}: {}", file.string(), k, e.what()));
        }
    };
    if (j.is_array()) {
        for (std::size_t k = 0; k < j.size(); ++k) {
            one(j[k], k);
        }
    } else if (j.is_object() && j.contains("tracks")) {
        for (std::size_t k = 0; k < j.at("tracks").size(); ++k) {
            one(j.at("tracks")[k], k);
        }
    } else {
        one(j, 0);
    }
    return out;
}

}  // namespace detail

struct BuildClipsResult {
    std::size_t tracks = 0;
    std::size_t clips = 0;
    double alpha_s = 0.0;
};

/// Expands every narration file in `input` into clip intervals and writes
/// corpus/manifest.json, corpus/stats.json and corpus/stats.md.
inline BuildClipsResult cmd_build_clips(const RunConfig& cfg, const fs::path& input, bool force, std::ostream& out) {
    require(fs::is_directory(input), fmt::format("input '{}' is not a directory", input.string()));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input)) {
        if (e.is_regular_file() && e.path().extension() == ".json") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<corpus::NarrationTrack> tracks;
    for (const auto& f : files) {
        auto t = detail::read_tracks(f);
        tracks.insert(tracks.end(), t.begin(), t.end());
    }
    require(!tracks.empty(), fmt::format("no tracks found in '{}'", input.string()));

    const RunPaths paths{cfg.output_dir};
    detail::reset_dir(paths.corpus(), force, "corpus directory");
    corpus::CorpusManifest m;
    m.alpha_s = corpus::compute_alpha(tracks);
    m.config_hash = config_hash(cfg);
    std::vector<std::string> texts;
    for (auto& t : tracks) {
        auto ex = corpus::expand_narrations(t, m.alpha_s);
        for (const auto& c : ex.clips) {
            texts.push_back(c.text);
        }
        m.tracks.push_back({"", std::move(t), std::move(ex.clips), ex.dropped_zero_length});
    }
    for (const auto& spec : corpus::builtin_bank_specs()) {
        m.banks.push_back(corpus::render_instructions(spec, cfg.seed));
    }
    const auto stats = corpus::corpus_stats(m.all_clips(), texts);
    write_text(paths.corpus() / "manifest.json", dump_json(corpus::corpus_to_json(m)));
    Json sj = corpus::stats_to_json(stats);
    sj["config_hash"] = m.config_hash;
    write_text(paths.corpus() / "stats.json", dump_json(sj));
    write_text(paths.corpus() / "stats.md", corpus::render_stats_markdown(stats));
    fmt::print(out, "{} tracks, {} clips, alpha = {:.4f} s -> {}\n", m.tracks.size(), m.clip_count(), m.alpha_s,
               paths.corpus().string());
    return {m.tracks.size(), m.clip_count(), m.alpha_s};
}

/// Statistics of a corpus manifest (a file, a corpus directory or a run).
inline corpus::StatsReport cmd_stats(const fs::path& target, std::ostream& out) {
    fs::path file = target;
    if (fs::is_directory(file)) {
        file = fs::exists(file / "manifest.json") ? file / "manifest.json" : file / "corpus" / "manifest.json";
    }
    require(fs::exists(file), fmt::format("no corpus manifest at '{}'", target.string()));
    const auto m = corpus::corpus_from_json(read_json(file));
    const auto stats = corpus::corpus_stats(m.all_clips());
    out << corpus::render_stats_markdown(stats);
    return stats;
}

/// Synthesises the dataset into <run>/dataset and returns its digest.
inline std::string cmd_synth(const RunConfig& cfg, bool force, std::ostream& out) {
    const RunPaths paths{cfg.output_dir};
    detail::reset_dir(paths.dataset(), force, "dataset directory");
    const auto ds = synth::synthesize(cfg.synth);
    const auto digest = synth::save_dataset(paths.dataset(), ds, config_hash(cfg));
    fmt::print(out, "{} episodes ({} mode), pairs train/val/test = {}/{}/{}, digest {} -> {}\n", ds.episodes.size(),
               synth::to_string(cfg.synth.world.mode), ds.splits.train.size(), ds.splits.val.size(),
               ds.splits.test.size(), digest, paths.dataset().string());
    return digest;
}

struct TrainOptions {
    std::string stage = "all";
    std::string ablation = "none";
    bool allow_skip = false;
    bool force = false;
};

namespace detail {

inline synth::Dataset require_dataset(const RunPaths& paths) {
    require(fs::exists(paths.dataset() / "dataset.json"),
            fmt::format("no dataset in '{}'; run `exo2ego synth` first", paths.root.string()));
    return synth::load_dataset(paths.dataset());
}

inline std::vector<StageId> stages_for(const std::string& s) {
    if (s == "all") {
        return {trainer::kAllStages.begin(), trainer::kAllStages.end()};
    }
    return {trainer::parse_stage_id(s)};
}

}  // namespace detail

/// Trains one stage (or all four) on top of the previous stage's checkpoint.
inline std::vector<trainer::TrainReport> cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& out) {
    trainer::check_ablation(opt.ablation);
    const RunPaths paths{cfg.output_dir};
    const auto ds = detail::require_dataset(paths);
    const auto profile = trainer::parse_profile(cfg.profile);
    const auto instr = trainer::caption_instructions(cfg.synth.seed);
    const std::string hash = config_hash(cfg);
    const std::string dataset_digest = read_json(paths.dataset() / "dataset.json").at("content_digest").get<std::string>();
    fs::create_directories(paths.logs());
    fs::create_directories(paths.reports());

    auto fresh = [&]() {
        trainer::TrainState<float> st{models::init_model<float>(trainer::model_config_for(ds.cfg.world, cfg.model, instr))};
        st.config_hash = hash;
        st.lora_plan = cfg.lora;
        if (profile.lm_warmup_epochs > 0) {
            std::vector<std::string> texts;
            for (const auto& c : ds.splits.train) {
                texts.push_back(c.text);
            }
            const auto w = trainer::warm_start_lm(st, texts, profile.lm_warmup_epochs, profile.lm_warmup_batch,
                                                  profile.lm_warmup_lr, cfg.model.seed);
            Json j = trainer::lm_warmup_to_json(w);
            j["config_hash"] = hash;
            write_text(paths.logs() / "lm_warmup.json", dump_json(j));
            fmt::print(out, "lm warm start: {} steps, loss {:.4f} -> {:.4f}\n", w.steps, w.first_loss, w.last_loss);
        }
        return st;
    };

    std::vector<trainer::TrainReport> reports;
    for (StageId stage : detail::stages_for(opt.stage)) {
        const auto name = trainer::to_string(stage);
        const auto ckpt = paths.checkpoint(stage);
        require(!fs::exists(ckpt) || opt.force,
                fmt::format("stage {} is already trained in '{}'; pass --force to retrain", name, paths.root.string()));

        std::optional<trainer::TrainState<float>> st;
        if (stage == StageId::init) {
            st.emplace(fresh());
        } else {
            const auto prev = static_cast<StageId>(trainer::stage_index(stage) - 1);
            if (fs::exists(paths.checkpoint(prev))) {
                st.emplace(trainer::load_checkpoint<float>(paths.checkpoint(prev)));
            } else {
                require(opt.allow_skip,
                        fmt::format("stage {} requires stage {} to be trained first; run `exo2ego train --stage {}` "
                                    "or pass --allow-skip",
                                    name, trainer::to_string(prev), trainer::to_string(prev)));
                for (int k = trainer::stage_index(prev) - 1; k >= 0 && !st; --k) {
                    if (fs::exists(paths.checkpoint(static_cast<StageId>(k)))) {
                        st.emplace(trainer::load_checkpoint<float>(paths.checkpoint(static_cast<StageId>(k))));
                    }
                }
                if (!st) {
                    st.emplace(fresh());
                }
            }
            require(st->config_hash == hash || opt.force,
                    fmt::format("checkpoint was trained under config {}, the run is now {}; pass --force to continue",
                                st->config_hash, hash));
            st->config_hash = hash;
        }
        if (const auto missing = trainer::missing_prerequisite(st->lineage, stage)) {
            require(opt.allow_skip, fmt::format("stage {} requires stage {} in the checkpoint lineage", name, *missing));
            st->skipped.push_back(*missing);
            fmt::print(out, "warning: running {} without {} (recorded as skipped)\n", name, *missing);
        }

        auto sc = trainer::stage_plan(stage, profile, opt.ablation, overrides_for(cfg, stage));
        sc.seed = cfg.model.seed;
        sc.dataset_ref = dataset_digest;
        const trainer::StageData data{ds.splits.train, ds.splits.test, instr};
        std::ofstream log(paths.logs() / fmt::format("{}.ndjson", name), std::ios::binary | std::ios::trunc);
        auto rep = trainer::run_stage(*st, sc, data, &log);
        log.close();

        if (fs::exists(ckpt)) {
            fs::remove_all(ckpt);
        }
        trainer::save_checkpoint(ckpt, *st, {name, cfg.model.seed, profile.name, opt.ablation});
        Json rj = {{"config_hash", hash},
                   {"ablation", opt.ablation},
                   {"profile", profile.name},
                   {"lineage", st->lineage},
                   {"skipped", st->skipped},
                   {"stage_config", trainer::stage_config_to_json(sc)},
                   {"report", trainer::train_report_to_json(rep)}};
        write_text(paths.reports() / fmt::format("train_{}.json", name), dump_json(rj));
        const auto [lead, trail] = rep.leading_trailing_decile();
        fmt::print(out, "{}: {} steps in {:.1f} s, loss {:.4f} -> {:.4f}", name, rep.steps, rep.wall_time_s, lead, trail);
        if (rep.probe_end) {
            fmt::print(out, ", held-out cycle {:.4f}, kl {:.5f}, retrieval {:.2f}", rep.probe_end->cycle,
                       rep.probe_end->kl, rep.probe_end->retrieval_top1);
        }
        fmt::print(out, "\n");
        reports.push_back(std::move(rep));
    }
    return reports;
}

struct EvalOptions {
    fs::path checkpoint;  ///< empty: the latest trained stage of the run
    fs::path items;       ///< empty: build the synthetic item set
};

/// Latest stage with a checkpoint in the run.
inline std::optional<StageId> latest_stage(const RunPaths& paths) {
    std::optional<StageId> last;
    for (StageId s : trainer::kAllStages) {
        if (fs::exists(paths.checkpoint(s) / "manifest.json")) {
            last = s;
        }
    }
    return last;
}

inline eval::EvalResult cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out) {
    const RunPaths paths{cfg.output_dir};
    fs::path ckpt = opt.checkpoint;
    if (ckpt.empty()) {
        const auto last = latest_stage(paths);
        require(last.has_value(), fmt::format("no checkpoint in '{}'; run `exo2ego train` first", paths.root.string()));
        ckpt = paths.checkpoint(*last);
    }
    trainer::CheckpointInfo info;
    auto st = trainer::load_checkpoint<float>(ckpt, &info);
    const auto ds = detail::require_dataset(paths);
    const auto instr = trainer::caption_instructions(cfg.synth.seed);
    const auto vocab = trainer::make_vocab(ds.cfg.world, instr);
    const auto& p = cfg.eval;
    require(p.split == "val" || p.split == "train" || p.split == "test", fmt::format("unknown split '{}'", p.split));
    const auto& clips = p.split == "val" ? ds.splits.val : p.split == "train" ? ds.splits.train : ds.splits.test;

    const fs::path dir = paths.eval(info.stage.empty() ? std::string("untrained") : info.stage);
    fs::create_directories(dir);
    std::vector<eval::EvalItem> items;
    if (opt.items.empty()) {
        const std::string question = p.instruction.empty() ? instr.at(0) : p.instruction;
        items = eval::build_synthetic_items(clips, ds.cfg.world, p, question, eval::bow_cosine());
    } else {
        items = eval::read_items(opt.items);
    }
    eval::write_items(dir / "items.jsonl", items);

    auto res = eval::run_eval(st, vocab, items, eval::index_clips(clips), p);
    res.report.config_hash = config_hash(cfg);
    Json mj = eval::eval_report_to_json(res.report);
    mj["ablation"] = info.ablation;
    mj["checkpoint_config_hash"] = st.config_hash;
    write_text(dir / "metrics.json", dump_json(mj));
    write_text(dir / "metrics.md", eval::eval_report_markdown(res.report));
    std::string preds;
    for (const auto& pr : res.predictions) {
        preds += eval::prediction_to_json(pr).dump();
        preds += '\n';
    }
    write_text(dir / "predictions.jsonl", preds);
    out << eval::eval_report_markdown(res.report);
    return res;
}

/// Tables (and optionally plots) over one or more run directories, written
/// to `dest`.
inline Report cmd_report(const std::vector<fs::path>& runs, const fs::path& dest, bool plots, std::ostream& out) {
    const Report r = build_report(runs);
    write_report(r, dest, plots);
    out << render_report_markdown(r);
    return r;
}

}  // namespace exo2ego::cli
