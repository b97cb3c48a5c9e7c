// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Accuracy, open-answer matching, AP/mAP and nDCG.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "exo2ego/common/error.hpp"

namespace exo2ego::eval {

/// Lowercase, punctuation to spaces, articles dropped.
inline std::vector<std::string> normalized_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") {
            out.push_back(cur);
        }
        cur.clear();
    };
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

struct OpenScore {
    int acc = 0;
    double score = 0.0;  ///< 5 x token F1, in [0, 5]
};

inline OpenScore score_open(const std::string& pred, const std::string& gold) {
    const auto p = normalized_tokens(pred);
    const auto g = normalized_tokens(gold);
    OpenScore out;
    out.acc = p == g ? 1 : 0;
    if (p.empty() && g.empty()) {
        out.score = 5.0;
        return out;
    }
    std::map<std::string, int> counts;
    for (const auto& t : g) {
        ++counts[t];
    }
    int common = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) {
        return out;
    }
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    out.score = 5.0 * 2.0 * precision * recall / (precision + recall);
    return out;
}

/// Mean over relevant ranks of precision at that rank. relevant[i] refers to
/// the item at rank i + 1.
inline double average_precision(std::span<const unsigned char> relevant) {
    int hits = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < relevant.size(); ++i) {
        if (relevant[i]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    require(hits > 0, "query has no relevant item");
    return sum / hits;
}

inline double mean_ap(const std::vector<std::vector<unsigned char>>& per_query) {
    require(!per_query.empty(), "mean_ap: no queries");
    double sum = 0.0;
    for (std::size_t q = 0; q < per_query.size(); ++q) {
        try {
            sum += average_precision(per_query[q]);
        } catch (const Error&) {
            throw Error(fmt::format("mean_ap: query {} has no relevant item", q));
        }
    }
    return sum / static_cast<double>(per_query.size());
}

inline double dcg(std::span<const double> gains) {
    double s = 0.0;
    for (std::size_t i = 0; i < gains.size(); ++i) {
        require(gains[i] >= 0.0, "ndcg: gains must be non-negative");
        s += gains[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    return s;
}

/// ideal must hold the same gains sorted descending.
inline double ndcg(std::span<const double> ranked, std::span<const double> ideal) {
    require(std::is_sorted(ideal.begin(), ideal.end(), std::greater<>()), "ndcg: ideal gains must be sorted descending");
    const double best = dcg(ideal);
    require(best > 0.0, "ndcg: ideal gains are all zero");
    return dcg(ranked) / best;
}

/// Gains in rank order; the ideal ordering is derived.
inline double ndcg(std::span<const double> ranked) {
    std::vector<double> ideal(ranked.begin(), ranked.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    return ndcg(ranked, ideal);
}

}  // namespace exo2ego::eval
