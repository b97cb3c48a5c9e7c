// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Whole synthetic datasets: generation and the on-disk layout
//
//   dataset.json              schema, world config, alpha, splits, digests
//   corpus.json               clip corpus manifest (exo2ego-corpus/1)
//   splits/{train,val,test}.json
//   episodes/<id>/ego.e2a     raw frames, f32, header {view, fps, episode}
//   episodes/<id>/exo<v>.e2a
//
// Loading re-derives the action program from the episode seed and checks it
// against the stored narration; frames come from the array files.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "exo2ego/common/array_io.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/corpus/groups.hpp"
#include "exo2ego/corpus/manifest.hpp"
#include "exo2ego/corpus/narration.hpp"
#include "exo2ego/synthworld/clips.hpp"
#include "exo2ego/synthworld/world.hpp"

namespace exo2ego::synth {

inline constexpr const char* kDatasetSchema = "exo2ego-dataset/1";

struct SynthConfig {
    WorldConfig world;
    int episodes = 150;
    std::uint64_t seed = 1;  ///< episode i uses seed * 100000 + i
    std::array<double, 3> ratios{0.5, 0.05, 0.45};

    std::uint64_t episode_seed(int i) const { return seed * 100000 + static_cast<std::uint64_t>(i); }
};

struct EpisodeRecord {
    Episode episode;
    RenderedEpisode views;
    corpus::Split split = corpus::Split::train;
};

struct Dataset {
    SynthConfig cfg;
    World world;
    double alpha_s = 0.0;
    std::vector<EpisodeRecord> episodes;
    Splits splits;
};

inline Json world_to_json(const WorldConfig& w) {
    return {{"mode", to_string(w.mode)},
            {"grid", w.grid},
            {"ego_radius", w.ego_radius},
            {"exo_views", w.exo_views},
            {"n_verbs", w.n_verbs},
            {"n_objects", w.n_objects},
            {"actions", w.actions},
            {"action_gap_s", w.action_gap_s},
            {"fps", w.fps},
            {"d_z", w.d_z},
            {"world_seed", w.world_seed}};
}

inline WorldConfig world_from_json(const Json& j) {
    WorldConfig w;
    w.mode = parse_render_mode(j.value("mode", std::string(to_string(w.mode))));
    w.grid = j.value("grid", w.grid);
    w.ego_radius = j.value("ego_radius", w.ego_radius);
    w.exo_views = j.value("exo_views", w.exo_views);
    w.n_verbs = j.value("n_verbs", w.n_verbs);
    w.n_objects = j.value("n_objects", w.n_objects);
    w.actions = j.value("actions", w.actions);
    w.action_gap_s = j.value("action_gap_s", w.action_gap_s);
    w.fps = j.value("fps", w.fps);
    w.d_z = j.value("d_z", w.d_z);
    w.world_seed = j.value("world_seed", w.world_seed);
    w.validate();
    return w;
}

inline Json synth_to_json(const SynthConfig& c) {
    return {{"world", world_to_json(c.world)},
            {"episodes", c.episodes},
            {"seed", c.seed},
            {"ratios", {c.ratios[0], c.ratios[1], c.ratios[2]}}};
}

inline SynthConfig synth_from_json(const Json& j) {
    SynthConfig c;
    if (j.contains("world")) {
        c.world = world_from_json(j.at("world"));
    }
    c.episodes = j.value("episodes", c.episodes);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ratios")) {
        const auto r = j.at("ratios").get<std::vector<double>>();
        require(r.size() == 3, "ratios must have three entries");
        c.ratios = {r[0], r[1], r[2]};
    }
    return c;
}

namespace detail {

inline void assign_pairs(Dataset& ds) {
    std::vector<ClipPair> all;
    for (const auto& rec : ds.episodes) {
        auto pairs = make_clip_pairs(rec.episode, rec.views, ds.alpha_s);
        all.insert(all.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
    }
    ds.splits = split_dataset(all, ds.cfg.ratios, ds.cfg.seed);
}

}  // namespace detail

inline Dataset synthesize(const SynthConfig& cfg) {
    require(cfg.episodes >= 1, "episodes must be positive");
    Dataset ds;
    ds.cfg = cfg;
    ds.world = make_world(cfg.world);
    std::vector<corpus::NarrationTrack> tracks;
    for (int i = 0; i < cfg.episodes; ++i) {
        EpisodeRecord rec;
        rec.episode = gen_episode(cfg.episode_seed(i), cfg.world);
        rec.views = render_episode(ds.world, rec.episode);
        tracks.push_back(narrate(rec.episode));
        ds.episodes.push_back(std::move(rec));
    }
    ds.alpha_s = corpus::compute_alpha(tracks);
    detail::assign_pairs(ds);

    auto mark = [&](const std::vector<ClipPair>& pairs, corpus::Split s) {
        for (const auto& p : pairs) {
            for (auto& rec : ds.episodes) {
                if (rec.episode.id == p.episode_id) {
                    rec.split = s;
                }
            }
        }
    };
    mark(ds.splits.val, corpus::Split::val);
    mark(ds.splits.test, corpus::Split::test);
    return ds;
}

inline corpus::CorpusManifest dataset_corpus(const Dataset& ds) {
    corpus::CorpusManifest m;
    m.alpha_s = ds.alpha_s;
    for (const auto& rec : ds.episodes) {
        corpus::CorpusTrack ct;
        ct.group_id = rec.episode.id;
        ct.track = narrate(rec.episode);
        auto exp = corpus::expand_narrations(ct.track, ds.alpha_s);
        ct.clips = std::move(exp.clips);
        ct.dropped_zero_length = exp.dropped_zero_length;
        m.tracks.push_back(std::move(ct));
    }
    m.banks.push_back(corpus::render_instructions(corpus::builtin_bank_spec("synth-captioning"), ds.cfg.seed));
    return m;
}

namespace detail {

inline Json split_json(const std::vector<ClipPair>& pairs, corpus::Split s) {
    Json ids = Json::array();
    std::vector<std::string> episodes;
    for (const auto& p : pairs) {
        ids.push_back(p.id());
        if (episodes.empty() || episodes.back() != p.episode_id) {
            episodes.push_back(p.episode_id);
        }
    }
    return {{"split", corpus::to_string(s)}, {"episodes", episodes}, {"pairs", std::move(ids)}};
}

}  // namespace detail

/// Writes the dataset and returns its content digest (FNV-1a over every file
/// except dataset.json, in a fixed order).
inline std::string save_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& config_hash) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "episodes");
    fs::create_directories(dir / "splits");
    Fnv1a digest;
    auto emit = [&](const fs::path& rel, const std::vector<char>& bytes) {
        write_bytes(dir / rel, bytes);
        digest.update(rel.generic_string());
        digest.update(std::as_bytes(std::span(bytes.data(), bytes.size())));
    };
    auto emit_text = [&](const fs::path& rel, const std::string& text) {
        emit(rel, std::vector<char>(text.begin(), text.end()));
    };

    corpus::CorpusManifest cm = dataset_corpus(ds);
    cm.config_hash = config_hash;
    emit_text("corpus.json", dump_json(corpus::corpus_to_json(cm)));
    emit_text("splits/train.json", dump_json(detail::split_json(ds.splits.train, corpus::Split::train)));
    emit_text("splits/val.json", dump_json(detail::split_json(ds.splits.val, corpus::Split::val)));
    emit_text("splits/test.json", dump_json(detail::split_json(ds.splits.test, corpus::Split::test)));

    Json episodes = Json::array();
    for (const auto& rec : ds.episodes) {
        const auto& ep = rec.episode;
        fs::create_directories(dir / "episodes" / ep.id);
        auto header = [&](View v, int index) {
            Json h = {{"view", to_string(v)}, {"fps", ep.fps}, {"episode", ep.id}};
            if (v == View::exo) {
                h["exo_index"] = index;
            }
            return h;
        };
        emit(fs::path("episodes") / ep.id / "ego.e2a",
             encode_array<float>(rec.views.ego.cast<float>(), header(View::ego, 0)));
        for (std::size_t v = 0; v < rec.views.exo.size(); ++v) {
            emit(fs::path("episodes") / ep.id / fmt::format("exo{}.e2a", v),
                 encode_array<float>(rec.views.exo[v].cast<float>(), header(View::exo, static_cast<int>(v))));
        }
        episodes.push_back({{"id", ep.id}, {"seed", ep.seed}, {"split", corpus::to_string(rec.split)}});
    }

    Json top = {{"schema", kDatasetSchema},
                {"config_hash", config_hash},
                {"synth", synth_to_json(ds.cfg)},
                {"alpha_s", ds.alpha_s},
                {"episodes", std::move(episodes)},
                {"pair_counts",
                 {{"train", ds.splits.train.size()}, {"val", ds.splits.val.size()}, {"test", ds.splits.test.size()}}},
                {"content_digest", digest.hex()}};
    if (ds.cfg.world.mode == RenderMode::linear) {
        top["ground_truth_map_digest"] = ds.world.map_digest();
    }
    write_text(dir / "dataset.json", dump_json(top));
    return digest.hex();
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const Json top = read_json(dir / "dataset.json");
    require(top.value("schema", std::string{}) == kDatasetSchema,
            fmt::format("{}: expected schema {}", (dir / "dataset.json").string(), kDatasetSchema));
    Dataset ds;
    ds.cfg = synth_from_json(top.at("synth"));
    ds.world = make_world(ds.cfg.world);
    ds.alpha_s = top.at("alpha_s").get<double>();
    const auto cm = corpus::corpus_from_json(read_json(dir / "corpus.json"));

    for (const auto& e : top.at("episodes")) {
        EpisodeRecord rec;
        rec.episode = gen_episode(e.at("seed").get<std::uint64_t>(), ds.cfg.world);
        rec.split = corpus::parse_split(e.at("split").get<std::string>());
        const auto& ep = rec.episode;
        require(ep.id == e.at("id").get<std::string>(), fmt::format("episode id mismatch for {}", ep.id));
        const auto stored = std::find_if(cm.tracks.begin(), cm.tracks.end(),
                                         [&](const corpus::CorpusTrack& t) { return t.group_id == ep.id; });
        require(stored != cm.tracks.end(), fmt::format("corpus.json has no track for {}", ep.id));
        require(stored->track.entries.size() == ep.program.size(),
                fmt::format("{}: stored narration does not match the episode program", ep.id));
        for (std::size_t k = 0; k < ep.program.size(); ++k) {
            require(stored->track.entries[k].text == narration_text(ep.program[k]) &&
                        std::abs(stored->track.entries[k].t - ep.program[k].t) < 1e-6,
                    fmt::format("{}: stored narration does not match the episode program", ep.id));
        }
        const auto base = dir / "episodes" / ep.id;
        rec.views.ego = read_array<double>(base / "ego.e2a");
        for (int v = 0; v < ds.cfg.world.exo_views; ++v) {
            rec.views.exo.push_back(read_array<double>(base / fmt::format("exo{}.e2a", v)));
        }
        require(rec.views.ego.rows() == ep.frames(), fmt::format("{}: frame count mismatch", ep.id));
        ds.episodes.push_back(std::move(rec));
    }
    detail::assign_pairs(ds);
    return ds;
}

}  // namespace exo2ego::synth
