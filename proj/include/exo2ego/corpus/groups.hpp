// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/corpus/narration.hpp"

namespace exo2ego::corpus {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(fmt::format("unknown split '{}'", s));
}

/// One ego recording with its simultaneously captured exo recordings.
struct GroupManifest {
    std::string group_id;
    std::string ego_ref;
    std::vector<std::string> exo_refs;
    std::vector<NarrationTrack> tracks;  ///< one per annotator, 0..2
    Split split = Split::train;
    std::string scenario;

    bool operator==(const GroupManifest&) const = default;
};

inline void validate_group(const GroupManifest& g) {
    require(!g.group_id.empty(), "group without id");
    require(g.exo_refs.size() >= 4 && g.exo_refs.size() <= 5,
            fmt::format("group {}: expected 4-5 exo refs, got {}", g.group_id, g.exo_refs.size()));
    require(g.tracks.size() <= 2, fmt::format("group {}: at most two narration tracks", g.group_id));
}

struct FilterRules {
    /// Decides whether a media reference maps to a known recording. The
    /// default accepts any non-empty reference.
    std::function<bool(const std::string&)> resolve = [](const std::string& ref) { return !ref.empty(); };
    std::set<Split> held_out = {Split::val, Split::test};
};

struct Rejection {
    GroupManifest group;
    std::string reason;  ///< "no-narration" | "missing-uid-mapping" | "held-out-split"
};

struct FilterResult {
    std::vector<GroupManifest> kept;
    std::vector<Rejection> rejected;
};

/// Rules run in a fixed order and the first failure is the reason reported.
inline FilterResult filter_groups(const std::vector<GroupManifest>& groups, const FilterRules& rules = {}) {
    FilterResult out;
    for (const auto& g : groups) {
        bool narrated = false;
        for (const auto& t : g.tracks) {
            narrated = narrated || !t.entries.empty();
        }
        bool resolvable = rules.resolve(g.ego_ref);
        for (const auto& ref : g.exo_refs) {
            resolvable = resolvable && rules.resolve(ref);
        }

        if (!narrated) {
            out.rejected.push_back({g, "no-narration"});
        } else if (!resolvable) {
            out.rejected.push_back({g, "missing-uid-mapping"});
        } else if (rules.held_out.contains(g.split)) {
            out.rejected.push_back({g, "held-out-split"});
        } else {
            out.kept.push_back(g);
        }
    }
    return out;
}

}  // namespace exo2ego::corpus
