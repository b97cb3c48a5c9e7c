// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Timestamp-level narrations to clip-level intervals.
//
// For a track with timestamps t_0..t_n and per-video mean gap beta, entry i
// becomes the interval
//
//     start_i = max(t_i - beta / (2 alpha), t_{i-1})
//     end_i   = min(t_i + beta / (2 alpha), t_{i+1})
//
// where alpha is the corpus-wide mean of beta. The missing neighbours at the
// track ends are 0 and duration_s. Neighbouring timestamps act as hard
// boundaries so no interval spans two narrations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"

namespace exo2ego::corpus {

struct NarrationEntry {
    double t = 0.0;
    std::string text;

    bool operator==(const NarrationEntry&) const = default;
};

struct NarrationTrack {
    std::string video_id;
    double duration_s = 0.0;
    std::vector<NarrationEntry> entries;
    std::string annotator_id;

    bool operator==(const NarrationTrack&) const = default;
};

struct ClipInterval {
    std::size_t index = 0;  ///< position of the source entry in its track
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
    double beta_s = 0.0;

    double duration() const { return end_s - start_s; }
    bool operator==(const ClipInterval&) const = default;
};

struct Expansion {
    std::vector<ClipInterval> clips;
    std::size_t dropped_zero_length = 0;
};

/// Checks the track invariants. Duplicate timestamps are tolerated when
/// allow_duplicates is set (expand_narrations drops the later duplicate).
inline void validate_track(const NarrationTrack& track, bool allow_duplicates = false) {
    require(!track.entries.empty(), "empty narration track");
    require(track.duration_s >= 0.0 && std::isfinite(track.duration_s),
            fmt::format("track {}: invalid duration {}", track.video_id, track.duration_s));
    for (std::size_t i = 0; i < track.entries.size(); ++i) {
        const auto& e = track.entries[i];
        require(std::isfinite(e.t) && e.t >= 0.0 && e.t <= track.duration_s,
                fmt::format("track {}: timestamp {} outside [0, {}]", track.video_id, e.t, track.duration_s));
        require(!e.text.empty(), fmt::format("track {}: entry {} has empty text", track.video_id, i));
        if (i > 0) {
            const double prev = track.entries[i - 1].t;
            const bool ok = allow_duplicates ? e.t >= prev : e.t > prev;
            require(ok, fmt::format("track {}: timestamps not ascending at entry {}", track.video_id, i));
        }
    }
}

/// Per-video mean gap between consecutive narrations, divided by the number
/// of gaps. Tracks with a single entry (or all-equal timestamps) have no
/// usable gap and take fallback_alpha.
inline double compute_beta(const NarrationTrack& track, double fallback_alpha) {
    require(!track.entries.empty(), "empty narration track");
    const std::size_t n = track.entries.size();
    if (n == 1) {
        return fallback_alpha;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) {
        sum += track.entries[j + 1].t - track.entries[j].t;
    }
    const double beta = sum / static_cast<double>(n - 1);
    return beta > 0.0 ? beta : fallback_alpha;
}

/// Mean per-video beta over tracks with at least two entries.
inline double compute_alpha(const std::vector<NarrationTrack>& tracks) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& track : tracks) {
        if (track.entries.size() < 2) {
            continue;
        }
        const double beta = compute_beta(track, 0.0);
        if (beta > 0.0) {
            sum += beta;
            ++count;
        }
    }
    require(count > 0, "compute_alpha: no track with at least two distinct timestamps");
    return sum / static_cast<double>(count);
}

inline Expansion expand_narrations(const NarrationTrack& track, double alpha) {
    require(alpha > 0.0 && std::isfinite(alpha), fmt::format("alpha must be positive, got {}", alpha));
    validate_track(track, /*allow_duplicates=*/true);

    const double beta = compute_beta(track, alpha);
    const double half_width = beta / (2.0 * alpha);
    const auto& e = track.entries;
    const std::size_t n = e.size();

    Expansion out;
    out.clips.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && e[i].t == e[i - 1].t) {
            // A repeated instant has no time of its own left.
            ++out.dropped_zero_length;
            continue;
        }
        const double lower = i == 0 ? 0.0 : e[i - 1].t;
        const double upper = i + 1 == n ? track.duration_s : e[i + 1].t;
        ClipInterval clip;
        clip.index = i;
        clip.start_s = std::max(e[i].t - half_width, lower);
        clip.end_s = std::min(e[i].t + half_width, upper);
        clip.text = e[i].text;
        clip.beta_s = beta;
        if (!(clip.end_s > clip.start_s)) {
            ++out.dropped_zero_length;
            continue;
        }
        out.clips.push_back(std::move(clip));
    }
    return out;
}

}  // namespace exo2ego::corpus
