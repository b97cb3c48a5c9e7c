// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Evaluation items, the similarity interface and distractor mining.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/common/rng.hpp"

namespace exo2ego::eval {

enum class TaskType { mcq, open, retrieval, multilabel };

inline const char* to_string(TaskType t) {
    switch (t) {
        case TaskType::mcq:
            return "mcq";
        case TaskType::open:
            return "open";
        case TaskType::retrieval:
            return "retrieval";
        case TaskType::multilabel:
            return "multilabel";
    }
    return "?";
}

inline TaskType parse_task_type(const std::string& s) {
    for (TaskType t : {TaskType::mcq, TaskType::open, TaskType::retrieval, TaskType::multilabel}) {
        if (s == to_string(t)) {
            return t;
        }
    }
    throw Error(fmt::format("unsupported task type '{}' (expected mcq, open, retrieval or multilabel)", s));
}

/// One question. Open items carry their reference answer as the single
/// candidate; every other task has 4, 5 or 10 distinct candidates.
struct EvalItem {
    std::string item_id;
    std::string question;
    std::vector<std::string> candidates;
    int gold_index = 0;
    TaskType task_type = TaskType::mcq;
    std::vector<std::string> provenance;  ///< source pool ids
    std::string clip_id;
    std::vector<int> relevant;   ///< multilabel positives; empty means {gold_index}
    std::vector<double> gains;   ///< graded relevance per candidate; empty means one-hot gold

    const std::string& gold() const { return candidates.at(static_cast<std::size_t>(gold_index)); }

    std::vector<int> relevant_or_gold() const { return relevant.empty() ? std::vector<int>{gold_index} : relevant; }

    std::vector<double> gains_or_gold() const {
        if (!gains.empty()) {
            return gains;
        }
        std::vector<double> g(candidates.size(), 0.0);
        g[static_cast<std::size_t>(gold_index)] = 1.0;
        return g;
    }

    void validate() const {
        const auto n = candidates.size();
        if (task_type == TaskType::open) {
            require(n == 1 && gold_index == 0, fmt::format("item '{}': open items hold exactly one reference", item_id));
        } else {
            require(n == 4 || n == 5 || n == 10,
                    fmt::format("item '{}': {} candidates (expected 4, 5 or 10)", item_id, n));
        }
        require(gold_index >= 0 && static_cast<std::size_t>(gold_index) < n,
                fmt::format("item '{}': gold_index {} out of range", item_id, gold_index));
        const std::set<std::string> uniq(candidates.begin(), candidates.end());
        require(uniq.size() == n, fmt::format("item '{}': candidates are not distinct", item_id));
        for (int r : relevant) {
            require(r >= 0 && static_cast<std::size_t>(r) < n, fmt::format("item '{}': relevant index {} out of range", item_id, r));
        }
        require(gains.empty() || gains.size() == n, fmt::format("item '{}': gains must match candidates", item_id));
    }

    bool operator==(const EvalItem&) const = default;
};

/// Lowercased alphanumeric runs.
inline std::vector<std::string> word_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

struct SimilarityFn {
    std::string name;
    std::function<std::vector<double>(const std::string&)> embed;
    std::function<double(std::span<const double>, std::span<const double>)> score;

    double operator()(const std::string& a, const std::string& b) const { return score(embed(a), embed(b)); }
};

/// Cosine of shorter-padded vectors; 0 when either side is all zero.
inline double padded_cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
        const double x = i < a.size() ? a[i] : 0.0;
        const double y = i < b.size() ? b[i] : 0.0;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// Word-set cosine. Dimensions are assigned to words as they are first seen,
/// so vectors from one instance are comparable; score does not depend on the
/// assignment order.
inline SimilarityFn bow_cosine() {
    struct Dims {
        std::mutex mu;
        std::map<std::string, std::size_t> index;
    };
    auto dims = std::make_shared<Dims>();
    SimilarityFn f;
    f.name = "bow-cosine";
    f.embed = [dims](const std::string& s) {
        std::vector<double> v;
        std::lock_guard lock(dims->mu);
        for (const auto& w : word_tokens(s)) {
            const auto [it, fresh] = dims->index.emplace(w, dims->index.size());
            if (v.size() <= it->second) {
                v.resize(it->second + 1, 0.0);
            }
            v[it->second] = 1.0;
        }
        return v;
    };
    f.score = padded_cosine;
    return f;
}

namespace detail {

/// Distinct strings in first-seen order, excluding `skip`.
inline std::vector<std::string> distinct_excluding(std::span<const std::string> pool, const std::set<std::string>& skip) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : pool) {
        if (!skip.contains(s) && seen.insert(s).second) {
            out.push_back(s);
        }
    }
    return out;
}

/// The n entries most similar to `anchor`; ties go to the lexicographically
/// smaller string, then to the earlier pool position.
inline std::vector<std::string> top_similar(const std::string& anchor, const std::vector<std::string>& pool,
                                            std::size_t n, const SimilarityFn& sim) {
    const auto a = sim.embed(anchor);
    std::vector<double> score(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        score[i] = sim.score(a, sim.embed(pool[i]));
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        if (score[i] != score[j]) {
            return score[i] > score[j];
        }
        return pool[i] < pool[j];
    });
    std::vector<std::string> out;
    for (std::size_t k = 0; k < n; ++k) {
        out.push_back(pool[order[k]]);
    }
    return out;
}

}  // namespace detail

/// gold plus its k most similar pool entries, shuffled by a seed derived from
/// item_id.
inline EvalItem build_mcq(const std::string& item_id, const std::string& gold, std::span<const std::string> pool,
                          int k, const SimilarityFn& sim, std::uint64_t seed) {
    require(k >= 1, "build_mcq: k must be positive");
    require(std::find(pool.begin(), pool.end(), gold) != pool.end(),
            fmt::format("build_mcq: pool for '{}' does not contain the gold answer", item_id));
    const auto others = detail::distinct_excluding(pool, {gold});
    require(others.size() >= static_cast<std::size_t>(k),
            fmt::format("build_mcq: insufficient pool for '{}': {} distinct distractors, need {}", item_id,
                        others.size(), k));
    EvalItem item;
    item.item_id = item_id;
    item.candidates.push_back(gold);
    for (auto& s : detail::top_similar(gold, others, static_cast<std::size_t>(k), sim)) {
        item.candidates.push_back(std::move(s));
    }
    Rng rng(mix_seed(seed, fnv1a(item_id)));
    std::vector<int> perm(item.candidates.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<std::string> shuffled;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.push_back(item.candidates[static_cast<std::size_t>(perm[i])]);
        if (perm[i] == 0) {
            item.gold_index = static_cast<int>(i);
        }
    }
    item.candidates = std::move(shuffled);
    return item;
}

/// Appends the five pool entries most similar to the gold answer that are
/// not already candidates.
inline EvalItem expand_candidates(const EvalItem& item, std::span<const std::string> pool, const SimilarityFn& sim) {
    require(item.candidates.size() == 5,
            fmt::format("expand_candidates: item '{}' has {} candidates, expected 5", item.item_id, item.candidates.size()));
    const std::set<std::string> have(item.candidates.begin(), item.candidates.end());
    const auto extra = detail::distinct_excluding(pool, have);
    require(extra.size() >= 5, fmt::format("expand_candidates: insufficient pool for '{}': {} new strings, need 5",
                                           item.item_id, extra.size()));
    EvalItem out = item;
    for (auto& s : detail::top_similar(item.gold(), extra, 5, sim)) {
        out.candidates.push_back(std::move(s));
    }
    return out;
}

inline Json item_to_json(const EvalItem& it) {
    Json j = {{"item_id", it.item_id},       {"task_type", to_string(it.task_type)},
              {"question", it.question},     {"candidates", it.candidates},
              {"gold_index", it.gold_index}, {"provenance", it.provenance},
              {"clip_id", it.clip_id}};
    if (!it.relevant.empty()) {
        j["relevant"] = it.relevant;
    }
    if (!it.gains.empty()) {
        j["gains"] = it.gains;
    }
    return j;
}

inline EvalItem item_from_json(const Json& j) {
    EvalItem it;
    it.item_id = j.at("item_id").get<std::string>();
    it.task_type = parse_task_type(j.at("task_type").get<std::string>());
    it.question = j.at("question").get<std::string>();
    it.candidates = j.at("candidates").get<std::vector<std::string>>();
    it.gold_index = j.at("gold_index").get<int>();
    it.provenance = j.value("provenance", std::vector<std::string>{});
    it.clip_id = j.value("clip_id", std::string());
    it.relevant = j.value("relevant", std::vector<int>{});
    it.gains = j.value("gains", std::vector<double>{});
    it.validate();
    return it;
}

inline void write_items(const std::filesystem::path& path, std::span<const EvalItem> items) {
    std::string text;
    for (const auto& it : items) {
        text += item_to_json(it).dump();
        text += '\n';
    }
    write_text(path, text);
}

inline std::vector<EvalItem> read_items(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), fmt::format("cannot open item file '{}'", path.string()));
    std::vector<EvalItem> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(item_from_json(Json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

}  // namespace exo2ego::eval
