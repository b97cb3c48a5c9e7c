// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Episode -> synchronized ego/exo clip pairs, and episode-level splits.

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/matrix.hpp"
#include "exo2ego/common/rng.hpp"
#include "exo2ego/corpus/narration.hpp"
#include "exo2ego/synthworld/world.hpp"

namespace exo2ego::synth {

inline constexpr int kClipFrames = 16;

struct FrameSeq {
    Matrix<float> frames;  ///< kClipFrames x frame width
    double fps = 0.0;
    View view = View::ego;
    std::vector<double> times;  ///< source timestamp of every row
};

struct ClipPair {
    std::string episode_id;
    corpus::ClipInterval interval;
    FrameSeq ego;
    std::vector<FrameSeq> exo;
    std::string text;
    Action action;

    std::string id() const { return fmt::format("{}#{}", episode_id, interval.index); }
};

/// Raw frame indices for [start_s, end_s]: the frames whose timestamps fall
/// inside the interval, sampled to kClipFrames by index round-half-up
/// (k * n / 16). An interval holding no frame repeats the frame nearest to
/// its midpoint.
inline std::array<int, kClipFrames> sample_indices(double start_s, double end_s, double fps, int raw_frames) {
    require(raw_frames > 0, "no raw frames to sample");
    constexpr double kSlack = 1e-9;
    int first = static_cast<int>(std::ceil(start_s * fps - kSlack));
    int last = static_cast<int>(std::floor(end_s * fps + kSlack));
    first = std::max(first, 0);
    last = std::min(last, raw_frames - 1);
    std::array<int, kClipFrames> idx{};
    if (last < first) {
        const int mid = std::clamp(static_cast<int>(std::lround(0.5 * (start_s + end_s) * fps)), 0, raw_frames - 1);
        idx.fill(mid);
        return idx;
    }
    const int n = last - first + 1;
    for (int k = 0; k < kClipFrames; ++k) {
        const int off = static_cast<int>(std::floor(static_cast<double>(k) * n / kClipFrames + 0.5));
        idx[k] = first + std::min(off, n - 1);
    }
    return idx;
}

inline FrameSeq take_frames(const Matrix<double>& raw, const std::array<int, kClipFrames>& idx, double fps, View view) {
    FrameSeq fs;
    fs.fps = fps;
    fs.view = view;
    fs.frames.resize(kClipFrames, raw.cols());
    for (int k = 0; k < kClipFrames; ++k) {
        fs.frames.row(k) = raw.row(idx[k]).cast<float>();
        fs.times.push_back(static_cast<double>(idx[k]) / fps);
    }
    return fs;
}

struct RenderedEpisode {
    Matrix<double> ego;
    std::vector<Matrix<double>> exo;
};

inline RenderedEpisode render_episode(const World& w, const Episode& ep) {
    RenderedEpisode r;
    r.ego = render_ego(w, ep);
    for (int v = 0; v < w.cfg.exo_views; ++v) {
        r.exo.push_back(render_exo(w, ep, v));
    }
    return r;
}

/// One pair per clip of expand_narrations(narrate(ep), alpha).
inline std::vector<ClipPair> make_clip_pairs(const Episode& ep, const RenderedEpisode& views, double alpha) {
    require(alpha > 0.0, fmt::format("alpha must be positive, got {}", alpha));
    const auto expansion = corpus::expand_narrations(narrate(ep), alpha);
    std::vector<ClipPair> out;
    out.reserve(expansion.clips.size());
    for (const auto& clip : expansion.clips) {
        const auto idx = sample_indices(clip.start_s, clip.end_s, ep.fps, ep.frames());
        ClipPair p;
        p.episode_id = ep.id;
        p.interval = clip;
        p.text = clip.text;
        p.action = ep.program.at(clip.index);
        p.ego = take_frames(views.ego, idx, ep.fps, View::ego);
        for (const auto& raw : views.exo) {
            p.exo.push_back(take_frames(raw, idx, ep.fps, View::exo));
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<ClipPair> make_clip_pairs(const World& w, const Episode& ep, double alpha) {
    return make_clip_pairs(ep, render_episode(w, ep), alpha);
}

struct Splits {
    std::vector<ClipPair> train;
    std::vector<ClipPair> val;
    std::vector<ClipPair> test;
};

/// Episode counts for the three splits by largest remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t episodes, const std::array<double, 3>& ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        require(r >= 0.0, "split ratios must be non-negative");
        sum += r;
    }
    require(std::abs(sum - 1.0) <= 1e-9, fmt::format("split ratios must sum to 1, got {}", sum));
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(episodes);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[i] = exact - static_cast<double>(counts[i]);
        used += counts[i];
    }
    while (used < episodes) {
        int best = 0;
        for (int i = 1; i < 3; ++i) {
            if (rem[i] > rem[best]) {
                best = i;
            }
        }
        ++counts[best];
        rem[best] = -1.0;
        ++used;
    }
    return counts;
}

/// Splits by episode: every pair of one episode lands in the same split.
/// Episodes are ordered by id, shuffled with `seed`, then cut by ratio.
inline Splits split_dataset(const std::vector<ClipPair>& pairs, const std::array<double, 3>& ratios, std::uint64_t seed) {
    std::map<std::string, std::vector<const ClipPair*>> by_episode;
    for (const auto& p : pairs) {
        by_episode[p.episode_id].push_back(&p);
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : by_episode) {
        ids.push_back(id);
    }
    const auto counts = split_counts(ids.size(), ratios);
    Rng rng(mix_seed(seed, 0x5b1));
    rng.shuffle(ids);

    Splits out;
    std::vector<ClipPair>* dst[3] = {&out.train, &out.val, &out.test};
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
        std::vector<std::string> chosen(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                                        ids.begin() + static_cast<std::ptrdiff_t>(pos + counts[s]));
        std::sort(chosen.begin(), chosen.end());
        for (const auto& id : chosen) {
            for (const ClipPair* p : by_episode[id]) {
                dst[s]->push_back(*p);
            }
        }
        pos += counts[s];
    }
    return out;
}

}  // namespace exo2ego::synth
