// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/corpus/narration.hpp"

namespace exo2ego::corpus {

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

/// Clip-duration and narration-length summary. Standard deviations are
/// population (divide by N).
struct StatsReport {
    std::size_t clip_count = 0;
    double duration_mean_s = 0.0;
    double duration_std_s = 0.0;
    double pct_under_1s = 0.0;
    double max_duration_s = 0.0;
    double narration_word_mean = 0.0;
    double narration_word_std = 0.0;
    double bin_width_s = 0.0;
    std::vector<HistogramBin> histogram;
};

inline std::size_t word_count(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    std::string w;
    while (in >> w) {
        ++n;
    }
    return n;
}

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) {
        var += (x - mean) * (x - mean);
    }
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace detail

/// texts may be empty, in which case the clip texts are used.
inline StatsReport corpus_stats(const std::vector<ClipInterval>& clips, const std::vector<std::string>& texts = {},
                                double bin_width_s = 0.25) {
    require(!clips.empty(), "corpus_stats: no clips");
    require(bin_width_s > 0.0, "corpus_stats: bin width must be positive");

    StatsReport r;
    r.clip_count = clips.size();
    r.bin_width_s = bin_width_s;

    std::vector<double> durations;
    durations.reserve(clips.size());
    std::size_t under = 0;
    for (const auto& c : clips) {
        const double d = c.duration();
        durations.push_back(d);
        under += d < 1.0 ? 1 : 0;
        r.max_duration_s = std::max(r.max_duration_s, d);
    }
    std::tie(r.duration_mean_s, r.duration_std_s) = detail::mean_std(durations);
    r.pct_under_1s = 100.0 * static_cast<double>(under) / static_cast<double>(clips.size());

    std::vector<double> words;
    if (texts.empty()) {
        for (const auto& c : clips) {
            words.push_back(static_cast<double>(word_count(c.text)));
        }
    } else {
        for (const auto& t : texts) {
            words.push_back(static_cast<double>(word_count(t)));
        }
    }
    std::tie(r.narration_word_mean, r.narration_word_std) = detail::mean_std(words);

    // Bins are [k w, (k+1) w); the maximum always lands in the last bin.
    const auto nbins = static_cast<std::size_t>(std::floor(r.max_duration_s / bin_width_s)) + 1;
    r.histogram.resize(nbins);
    for (std::size_t k = 0; k < nbins; ++k) {
        r.histogram[k].lo = static_cast<double>(k) * bin_width_s;
        r.histogram[k].hi = static_cast<double>(k + 1) * bin_width_s;
    }
    for (double d : durations) {
        auto k = static_cast<std::size_t>(std::floor(d / bin_width_s));
        r.histogram[std::min(k, nbins - 1)].count++;
    }
    return r;
}

inline std::string render_stats_markdown(const StatsReport& r) {
    std::string out;
    out += "| statistic | value |\n|---|---|\n";
    out += fmt::format("| clips | {} |\n", r.clip_count);
    out += fmt::format("| mean duration (s) | {:.4f} |\n", r.duration_mean_s);
    out += fmt::format("| std duration (s, population) | {:.4f} |\n", r.duration_std_s);
    out += fmt::format("| clips shorter than 1.0 s (%) | {:.2f} |\n", r.pct_under_1s);
    out += fmt::format("| longest clip (s) | {:.4f} |\n", r.max_duration_s);
    out += fmt::format("| mean narration length (words) | {:.4f} |\n", r.narration_word_mean);
    out += fmt::format("| std narration length (words, population) | {:.4f} |\n", r.narration_word_std);
    out += "\n| duration bin (s) | clips |\n|---|---|\n";
    for (const auto& b : r.histogram) {
        out += fmt::format("| [{:.2f}, {:.2f}) | {} |\n", b.lo, b.hi, b.count);
    }
    return out;
}

}  // namespace exo2ego::corpus
