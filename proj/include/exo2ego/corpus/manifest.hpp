// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON forms of narration tracks, group manifests and the clip corpus
// manifest ("schema": "exo2ego-corpus/1"). Times are written with nine
// fractional digits.

#include <string>
#include <vector>

#include "exo2ego/common/json_util.hpp"
#include "exo2ego/corpus/groups.hpp"
#include "exo2ego/corpus/instructions.hpp"
#include "exo2ego/corpus/narration.hpp"
#include "exo2ego/corpus/stats.hpp"

namespace exo2ego::corpus {

inline constexpr const char* kCorpusSchema = "exo2ego-corpus/1";

inline Json track_to_json(const NarrationTrack& t) {
    Json entries = Json::array();
    for (const auto& e : t.entries) {
        entries.push_back({{"t", fixed_number(e.t)}, {"text", e.text}});
    }
    return {{"video_id", t.video_id},
            {"annotator_id", t.annotator_id},
            {"duration_s", fixed_number(t.duration_s)},
            {"entries", std::move(entries)}};
}

inline NarrationTrack track_from_json(const Json& j) {
    NarrationTrack t;
    t.video_id = j.at("video_id").get<std::string>();
    t.annotator_id = j.value("annotator_id", std::string{});
    t.duration_s = j.at("duration_s").get<double>();
    for (const auto& e : j.at("entries")) {
        t.entries.push_back({e.at("t").get<double>(), e.at("text").get<std::string>()});
    }
    return t;
}

inline Json group_to_json(const GroupManifest& g) {
    Json tracks = Json::array();
    for (const auto& t : g.tracks) {
        tracks.push_back(track_to_json(t));
    }
    return {{"group_id", g.group_id}, {"ego_ref", g.ego_ref},      {"exo_refs", g.exo_refs},
            {"tracks", std::move(tracks)}, {"split", to_string(g.split)}, {"scenario", g.scenario}};
}

inline GroupManifest group_from_json(const Json& j) {
    GroupManifest g;
    g.group_id = j.at("group_id").get<std::string>();
    g.ego_ref = j.at("ego_ref").get<std::string>();
    g.exo_refs = j.at("exo_refs").get<std::vector<std::string>>();
    for (const auto& t : j.value("tracks", Json::array())) {
        g.tracks.push_back(track_from_json(t));
    }
    g.split = parse_split(j.value("split", std::string("train")));
    g.scenario = j.value("scenario", std::string{});
    validate_group(g);
    return g;
}

inline Json clip_to_json(const ClipInterval& c) {
    return {{"index", c.index},
            {"start_s", fixed_number(c.start_s)},
            {"end_s", fixed_number(c.end_s)},
            {"text", c.text},
            {"beta_s", fixed_number(c.beta_s)}};
}

inline ClipInterval clip_from_json(const Json& j) {
    return {j.at("index").get<std::size_t>(), j.at("start_s").get<double>(), j.at("end_s").get<double>(),
            j.at("text").get<std::string>(), j.at("beta_s").get<double>()};
}

inline Json stats_to_json(const StatsReport& r) {
    Json bins = Json::array();
    for (const auto& b : r.histogram) {
        bins.push_back({{"lo", fixed_number(b.lo)}, {"hi", fixed_number(b.hi)}, {"count", b.count}});
    }
    return {{"clip_count", r.clip_count},
            {"duration_mean_s", fixed_number(r.duration_mean_s)},
            {"duration_std_s", fixed_number(r.duration_std_s)},
            {"std_kind", "population"},
            {"pct_under_1s", fixed_number(r.pct_under_1s, 6)},
            {"max_duration_s", fixed_number(r.max_duration_s)},
            {"narration_word_mean", fixed_number(r.narration_word_mean)},
            {"narration_word_std", fixed_number(r.narration_word_std)},
            {"bin_width_s", fixed_number(r.bin_width_s)},
            {"histogram", std::move(bins)}};
}

inline Json bank_to_json(const InstructionBank& b) {
    return {{"dataset_name", b.dataset_name},
            {"task_type", to_string(b.task_type)},
            {"instructions", b.instructions},
            {"template_seed", b.template_seed}};
}

inline InstructionBank bank_from_json(const Json& j) {
    return {j.at("dataset_name").get<std::string>(), parse_task_type(j.at("task_type").get<std::string>()),
            j.at("instructions").get<std::vector<std::string>>(), j.at("template_seed").get<std::uint64_t>()};
}

/// One expanded track inside a corpus manifest.
struct CorpusTrack {
    std::string group_id;  ///< empty for standalone tracks
    NarrationTrack track;
    std::vector<ClipInterval> clips;
    std::size_t dropped_zero_length = 0;

    bool operator==(const CorpusTrack&) const = default;
};

struct CorpusManifest {
    double alpha_s = 0.0;
    std::string config_hash;
    std::vector<CorpusTrack> tracks;
    std::vector<std::pair<std::string, std::string>> rejected;  ///< (group_id, reason)
    std::vector<InstructionBank> banks;

    std::size_t clip_count() const {
        std::size_t n = 0;
        for (const auto& t : tracks) {
            n += t.clips.size();
        }
        return n;
    }
    std::vector<ClipInterval> all_clips() const {
        std::vector<ClipInterval> out;
        for (const auto& t : tracks) {
            out.insert(out.end(), t.clips.begin(), t.clips.end());
        }
        return out;
    }
};

inline Json corpus_to_json(const CorpusManifest& m) {
    Json tracks = Json::array();
    for (const auto& ct : m.tracks) {
        Json clips = Json::array();
        for (const auto& c : ct.clips) {
            clips.push_back(clip_to_json(c));
        }
        tracks.push_back({{"group_id", ct.group_id},
                          {"track", track_to_json(ct.track)},
                          {"clips", std::move(clips)},
                          {"dropped_zero_length", ct.dropped_zero_length}});
    }
    Json rejected = Json::array();
    for (const auto& [id, reason] : m.rejected) {
        rejected.push_back({{"group_id", id}, {"reason", reason}});
    }
    Json banks = Json::array();
    for (const auto& b : m.banks) {
        banks.push_back(bank_to_json(b));
    }
    return {{"schema", kCorpusSchema},     {"alpha_s", fixed_number(m.alpha_s)},
            {"config_hash", m.config_hash}, {"clip_count", m.clip_count()},
            {"tracks", std::move(tracks)},  {"rejected", std::move(rejected)},
            {"instruction_banks", std::move(banks)}};
}

inline CorpusManifest corpus_from_json(const Json& j) {
    require(j.value("schema", std::string{}) == kCorpusSchema,
            fmt::format("expected schema {}, got '{}'", kCorpusSchema, j.value("schema", std::string{})));
    CorpusManifest m;
    m.alpha_s = j.at("alpha_s").get<double>();
    m.config_hash = j.value("config_hash", std::string{});
    for (const auto& t : j.at("tracks")) {
        CorpusTrack ct;
        ct.group_id = t.value("group_id", std::string{});
        ct.track = track_from_json(t.at("track"));
        for (const auto& c : t.at("clips")) {
            ct.clips.push_back(clip_from_json(c));
        }
        ct.dropped_zero_length = t.value("dropped_zero_length", std::size_t{0});
        m.tracks.push_back(std::move(ct));
    }
    for (const auto& r : j.value("rejected", Json::array())) {
        m.rejected.emplace_back(r.at("group_id").get<std::string>(), r.at("reason").get<std::string>());
    }
    for (const auto& b : j.value("instruction_banks", Json::array())) {
        m.banks.push_back(bank_from_json(b));
    }
    return m;
}

}  // namespace exo2ego::corpus
