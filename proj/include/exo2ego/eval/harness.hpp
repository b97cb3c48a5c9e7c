// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic item sets, likelihood scoring with the language model, and the
// metric report.
//
// Every candidate is scored by its mean next-token NLL given the clip prefix
// and the question; the prediction is the lowest-loss candidate. Open items
// are answered by greedy decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/common/rng.hpp"
#include "exo2ego/eval/items.hpp"
#include "exo2ego/eval/metrics.hpp"
#include "exo2ego/models/model.hpp"
#include "exo2ego/models/vocab.hpp"
#include "exo2ego/synthworld/clips.hpp"
#include "exo2ego/synthworld/world.hpp"
#include "exo2ego/trainer/pipeline.hpp"

namespace exo2ego::eval {

using synth::ClipPair;

struct EvalProtocol {
    std::string name = "synthetic";
    std::string split = "test";
    int mcq_items = 500;
    int retrieval_items = 100;
    int multilabel_items = 100;
    int open_items = 100;
    int distractors = 4;
    std::uint64_t seed = 11;
    std::string instruction;  ///< empty: the first caption instruction
    int max_open_tokens = 8;
    std::vector<TaskType> tasks{TaskType::mcq, TaskType::retrieval, TaskType::multilabel, TaskType::open};

    int items_for(TaskType t) const {
        switch (t) {
            case TaskType::mcq:
                return mcq_items;
            case TaskType::retrieval:
                return retrieval_items;
            case TaskType::multilabel:
                return multilabel_items;
            case TaskType::open:
                return open_items;
        }
        return 0;
    }

    bool enabled(TaskType t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }
};

inline Json protocol_to_json(const EvalProtocol& p) {
    std::vector<std::string> tasks;
    for (auto t : p.tasks) {
        tasks.emplace_back(to_string(t));
    }
    return {{"name", p.name},
            {"split", p.split},
            {"mcq_items", p.mcq_items},
            {"retrieval_items", p.retrieval_items},
            {"multilabel_items", p.multilabel_items},
            {"open_items", p.open_items},
            {"distractors", p.distractors},
            {"seed", p.seed},
            {"instruction", p.instruction},
            {"max_open_tokens", p.max_open_tokens},
            {"tasks", tasks}};
}

inline EvalProtocol protocol_from_json(const Json& j) {
    EvalProtocol p;
    p.name = j.value("name", p.name);
    p.split = j.value("split", p.split);
    p.mcq_items = j.value("mcq_items", p.mcq_items);
    p.retrieval_items = j.value("retrieval_items", p.retrieval_items);
    p.multilabel_items = j.value("multilabel_items", p.multilabel_items);
    p.open_items = j.value("open_items", p.open_items);
    p.distractors = j.value("distractors", p.distractors);
    p.seed = j.value("seed", p.seed);
    p.instruction = j.value("instruction", p.instruction);
    p.max_open_tokens = j.value("max_open_tokens", p.max_open_tokens);
    if (j.contains("tasks")) {
        p.tasks.clear();
        for (const auto& s : j.at("tasks")) {
            p.tasks.push_back(parse_task_type(s.get<std::string>()));
        }
    }
    require(p.distractors >= 1, "eval protocol: distractors must be positive");
    return p;
}

/// Every narration the world can produce.
inline std::vector<std::string> world_narrations(const synth::WorldConfig& w) {
    std::vector<std::string> out;
    for (int v = 0; v < w.n_verbs; ++v) {
        for (int o = 0; o < w.n_objects; ++o) {
            out.push_back(synth::narration_text({0.0, v, o}));
        }
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> pick_clips(std::size_t n_clips, int n_items, std::uint64_t seed, TaskType t) {
    std::vector<std::size_t> order(n_clips);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0xe7a10000ULL + static_cast<std::uint64_t>(t)));
    rng.shuffle(order);
    std::vector<std::size_t> out;
    for (int i = 0; i < n_items; ++i) {
        out.push_back(order[static_cast<std::size_t>(i) % n_clips]);
    }
    return out;
}

}  // namespace detail

/// Items over the clips of one split.
///
///   mcq         gold narration + hardest distractors from all world narrations
///   retrieval   5-way from narrations of other episodes, expanded to 10
///   multilabel  10-way over world narrations; positives share the gold verb,
///               gains count shared verb and object
///   open        free answer checked against the gold narration
inline std::vector<EvalItem> build_synthetic_items(std::span<const ClipPair> clips, const synth::WorldConfig& world,
                                                   const EvalProtocol& p, const std::string& question,
                                                   const SimilarityFn& sim) {
    require(!clips.empty(), fmt::format("no clips in split '{}' to build items from", p.split));
    const auto narrations = world_narrations(world);
    std::map<std::string, synth::Action> action_of;
    for (int v = 0; v < world.n_verbs; ++v) {
        for (int o = 0; o < world.n_objects; ++o) {
            action_of[synth::narration_text({0.0, v, o})] = {0.0, v, o};
        }
    }

    std::vector<EvalItem> items;
    for (TaskType t : p.tasks) {
        const auto picks = detail::pick_clips(clips.size(), p.items_for(t), p.seed, t);
        for (std::size_t i = 0; i < picks.size(); ++i) {
            const ClipPair& c = clips[picks[i]];
            const std::string id = fmt::format("{}-{:04d}", to_string(t), i);
            EvalItem item;
            switch (t) {
                case TaskType::mcq:
                    item = build_mcq(id, c.text, narrations, p.distractors, sim, p.seed);
                    item.provenance = {"world-narrations"};
                    break;
                case TaskType::retrieval: {
                    std::vector<std::string> pool{c.text};
                    for (const auto& o : clips) {
                        if (o.episode_id != c.episode_id) {
                            pool.push_back(o.text);
                        }
                    }
                    item = expand_candidates(build_mcq(id, c.text, pool, 4, sim, p.seed), pool, sim);
                    item.provenance = {fmt::format("inter-episode:{}", p.split)};
                    break;
                }
                case TaskType::multilabel: {
                    item = expand_candidates(build_mcq(id, c.text, narrations, 4, sim, p.seed), narrations, sim);
                    item.provenance = {"world-narrations"};
                    const auto& gold = action_of.at(c.text);
                    for (std::size_t k = 0; k < item.candidates.size(); ++k) {
                        const auto& a = action_of.at(item.candidates[k]);
                        if (a.verb == gold.verb) {
                            item.relevant.push_back(static_cast<int>(k));
                        }
                        item.gains.push_back((a.verb == gold.verb ? 1.0 : 0.0) + (a.object == gold.object ? 1.0 : 0.0));
                    }
                    break;
                }
                case TaskType::open:
                    item.item_id = id;
                    item.candidates = {c.text};
                    item.gold_index = 0;
                    item.provenance = {"clip-narration"};
                    break;
            }
            item.task_type = t;
            item.question = question;
            item.clip_id = c.id();
            item.provenance.push_back(c.id());
            item.validate();
            items.push_back(std::move(item));
        }
    }
    return items;
}

/// item_id -> predicted index. Throws listing every item without one.
inline double score_mcq(const std::map<std::string, int>& predictions, std::span<const EvalItem> items) {
    require(!items.empty(), "score_mcq: no items");
    std::vector<std::string> missing;
    std::size_t correct = 0;
    for (const auto& it : items) {
        auto p = predictions.find(it.item_id);
        if (p == predictions.end()) {
            missing.push_back(it.item_id);
            continue;
        }
        correct += p->second == it.gold_index ? 1 : 0;
    }
    require(missing.empty(), fmt::format("missing predictions for {} item(s): {}", missing.size(), fmt::join(missing, ", ")));
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

/// Index of the smallest loss; ties go to the lower index.
inline int argmin_loss(std::span<const double> losses) {
    require(!losses.empty(), "argmin_loss: no candidates");
    return static_cast<int>(std::min_element(losses.begin(), losses.end()) - losses.begin());
}

/// Candidate indices by increasing loss, ties by index.
inline std::vector<int> rank_by_loss(std::span<const double> losses) {
    std::vector<int> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return losses[static_cast<std::size_t>(a)] < losses[static_cast<std::size_t>(b)]; });
    return order;
}

/// Visual prefix for a clip: ego features, followed by their mapped exo
/// guidance once the mapping has been trained.
template <class T>
ag::Var<T> clip_prefix(models::Model<T>& m, const ClipPair& c, bool guided) {
    const auto x = models::encode(m, synth::View::ego, c.ego);
    if (!guided) {
        return x;
    }
    return models::concat_guidance(x, models::map_apply(m, models::MapDir::F, x));
}

/// Mean NLL of each candidate's answer tokens.
template <class T>
std::vector<double> candidate_losses(models::Model<T>& m, const models::Vocab& vocab, const ag::Var<T>& prefix,
                                     const std::string& question, std::span<const std::string> candidates) {
    std::vector<models::LmInput<T>> batch;
    std::vector<models::TokenizedSample> toks;
    for (const auto& c : candidates) {
        toks.push_back(models::tokenize_sample(vocab, question, c));
        batch.push_back({prefix, toks.back().tokens});
    }
    const auto out = models::lm_forward<T>(m, batch);
    const auto& logits = out.logits.value();
    std::vector<double> losses;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        double nll = 0.0;
        int count = 0;
        for (Eigen::Index k = 0; k < out.counts[s]; ++k) {
            if (!toks[s].target_mask[static_cast<std::size_t>(k)]) {
                continue;
            }
            const auto row = logits.row(out.offsets[s] + k).template cast<double>();
            const double mx = row.maxCoeff();
            const double lse = mx + std::log((row.array() - mx).exp().sum());
            nll += lse - row(toks[s].tokens[static_cast<std::size_t>(k)]);
            ++count;
        }
        losses.push_back(nll / count);
    }
    return losses;
}

template <class T>
std::string greedy_answer(models::Model<T>& m, const models::Vocab& vocab, const ag::Var<T>& prefix,
                          const std::string& question, int max_tokens) {
    std::vector<int> tokens = vocab.encode(question);
    tokens.push_back(models::Vocab::kSep);
    std::vector<int> answer;
    for (int step = 0; step < max_tokens; ++step) {
        std::vector<models::LmInput<T>> batch(1);
        batch[0].prefix = prefix;
        batch[0].tokens = tokens;
        batch[0].tokens.push_back(models::Vocab::kEos);  // placeholder; its row predicts the next word
        const auto out = models::lm_forward<T>(m, batch);
        Eigen::Index next = 0;
        out.logits.value().row(out.offsets[0] + out.counts[0] - 1).maxCoeff(&next);
        if (next == models::Vocab::kEos) {
            break;
        }
        tokens.push_back(static_cast<int>(next));
        answer.push_back(static_cast<int>(next));
    }
    return vocab.decode(answer);
}

struct Prediction {
    std::string item_id;
    TaskType task_type = TaskType::mcq;
    int prediction = 0;
    std::vector<double> losses;
    std::string answer;
    bool correct = false;
    std::optional<double> ap;
    std::optional<double> ndcg;
    std::optional<double> open_score;
};

struct TaskMetrics {
    TaskType task = TaskType::mcq;
    std::size_t items = 0;
    double accuracy = 0.0;
    double chance = 0.0;  ///< accuracy of a uniform guess
    std::optional<double> score;
    std::optional<double> map;
    std::optional<double> ndcg;
};

struct EvalReport {
    std::string protocol;
    std::string config_hash;
    std::vector<std::string> lineage;
    bool guided = false;
    std::vector<TaskMetrics> tasks;
    std::size_t items = 0;
    double aggregate_accuracy = 0.0;

    const TaskMetrics* find(TaskType t) const {
        for (const auto& m : tasks) {
            if (m.task == t) {
                return &m;
            }
        }
        return nullptr;
    }
};

struct EvalResult {
    EvalReport report;
    std::vector<Prediction> predictions;
};

inline std::map<std::string, const ClipPair*> index_clips(std::span<const ClipPair> clips) {
    std::map<std::string, const ClipPair*> out;
    for (const auto& c : clips) {
        out.emplace(c.id(), &c);
    }
    return out;
}

template <class T>
EvalResult run_eval(trainer::TrainState<T>& st, const models::Vocab& vocab, std::span<const EvalItem> items,
                    const std::map<std::string, const ClipPair*>& clips, const EvalProtocol& p) {
    const auto& lin = st.lineage;
    require(std::find(lin.begin(), lin.end(), "init") != lin.end(),
            "run_eval: model lineage does not include init; train at least the init stage first");
    require(!items.empty(), "run_eval: no items");
    auto& m = st.model;
    m.params.set_trainable({});
    EvalResult res;
    res.report.protocol = p.name;
    res.report.config_hash = st.config_hash;
    res.report.lineage = lin;
    res.report.guided = std::find(lin.begin(), lin.end(), "s2") != lin.end();

    for (const auto& it : items) {
        require(p.enabled(it.task_type),
                fmt::format("run_eval: unsupported task type '{}' for protocol '{}'", to_string(it.task_type), p.name));
        it.validate();
        auto c = clips.find(it.clip_id);
        require(c != clips.end(), fmt::format("run_eval: item '{}' refers to unknown clip '{}'", it.item_id, it.clip_id));
        const auto prefix = clip_prefix(m, *c->second, res.report.guided);

        Prediction pr;
        pr.item_id = it.item_id;
        pr.task_type = it.task_type;
        if (it.task_type == TaskType::open) {
            pr.answer = greedy_answer(m, vocab, prefix, it.question, p.max_open_tokens);
            const auto s = score_open(pr.answer, it.gold());
            pr.correct = s.acc == 1;
            pr.open_score = s.score;
        } else {
            pr.losses = candidate_losses(m, vocab, prefix, it.question, it.candidates);
            pr.prediction = argmin_loss(pr.losses);
            pr.answer = it.candidates[static_cast<std::size_t>(pr.prediction)];
            pr.correct = pr.prediction == it.gold_index;
            if (it.task_type != TaskType::mcq) {
                const auto order = rank_by_loss(pr.losses);
                const auto rel = it.relevant_or_gold();
                const auto gains = it.gains_or_gold();
                std::vector<unsigned char> flags;
                std::vector<double> ranked;
                for (int k : order) {
                    flags.push_back(std::find(rel.begin(), rel.end(), k) != rel.end() ? 1 : 0);
                    ranked.push_back(gains[static_cast<std::size_t>(k)]);
                }
                pr.ap = average_precision(flags);
                pr.ndcg = ndcg(ranked);
            }
        }
        res.predictions.push_back(std::move(pr));
    }

    std::size_t correct_total = 0;
    for (TaskType t : p.tasks) {
        TaskMetrics tm;
        tm.task = t;
        double acc = 0.0;
        double score = 0.0;
        double ap = 0.0;
        double nd = 0.0;
        double inv_n = 0.0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& pr = res.predictions[i];
            if (pr.task_type != t) {
                continue;
            }
            ++tm.items;
            acc += pr.correct ? 1.0 : 0.0;
            score += pr.open_score.value_or(0.0);
            ap += pr.ap.value_or(0.0);
            nd += pr.ndcg.value_or(0.0);
            inv_n += 1.0 / static_cast<double>(items[i].candidates.size());
        }
        if (tm.items == 0) {
            continue;
        }
        const double n = static_cast<double>(tm.items);
        tm.accuracy = acc / n;
        correct_total += static_cast<std::size_t>(acc);
        if (t == TaskType::open) {
            tm.score = score / n;
        } else {
            tm.chance = inv_n / n;
        }
        if (t == TaskType::retrieval || t == TaskType::multilabel) {
            tm.map = ap / n;
            tm.ndcg = nd / n;
        }
        res.report.items += tm.items;
        res.report.tasks.push_back(tm);
    }
    res.report.aggregate_accuracy = static_cast<double>(correct_total) / static_cast<double>(res.report.items);
    return res;
}

inline Json task_metrics_to_json(const TaskMetrics& m) {
    Json j = {{"task", to_string(m.task)},
              {"items", m.items},
              {"accuracy", fixed_number(m.accuracy, 6)},
              {"chance", fixed_number(m.chance, 6)}};
    if (m.score) {
        j["score"] = fixed_number(*m.score, 6);
    }
    if (m.map) {
        j["map"] = fixed_number(*m.map, 6);
    }
    if (m.ndcg) {
        j["ndcg"] = fixed_number(*m.ndcg, 6);
    }
    return j;
}

inline Json eval_report_to_json(const EvalReport& r) {
    Json tasks = Json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back(task_metrics_to_json(t));
    }
    return {{"protocol", r.protocol},
            {"config_hash", r.config_hash},
            {"lineage", r.lineage},
            {"stage", r.lineage.empty() ? std::string() : r.lineage.back()},
            {"guided", r.guided},
            {"items", r.items},
            {"aggregate_accuracy", fixed_number(r.aggregate_accuracy, 6)},
            {"tasks", std::move(tasks)}};
}

inline Json prediction_to_json(const Prediction& p) {
    Json j = {{"item_id", p.item_id},
              {"task_type", to_string(p.task_type)},
              {"prediction", p.prediction},
              {"answer", p.answer},
              {"correct", p.correct}};
    if (!p.losses.empty()) {
        Json l = Json::array();
        for (double v : p.losses) {
            l.push_back(fixed_number(v, 6));
        }
        j["losses"] = std::move(l);
    }
    if (p.ap) {
        j["ap"] = fixed_number(*p.ap, 6);
    }
    if (p.ndcg) {
        j["ndcg"] = fixed_number(*p.ndcg, 6);
    }
    if (p.open_score) {
        j["open_score"] = fixed_number(*p.open_score, 6);
    }
    return j;
}

inline std::string eval_report_markdown(const EvalReport& r) {
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); };
    std::string s = fmt::format("# Evaluation: {}\n\n", r.protocol);
    s += fmt::format("- lineage: {}\n", r.lineage.empty() ? std::string("(none)") : fmt::format("{}", fmt::join(r.lineage, " > ")));
    s += fmt::format("- prefix: {}\n", r.guided ? "ego + mapped exo" : "ego only");
    s += fmt::format("- config hash: {}\n\n", r.config_hash);
    s += "| task | items | accuracy | chance | score | mAP | nDCG |\n";
    s += "|---|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& t : r.tasks) {
        s += fmt::format("| {} | {} | {:.4f} | {} | {} | {} | {} |\n", to_string(t.task), t.items, t.accuracy,
                         t.task == TaskType::open ? std::string("-") : fmt::format("{:.4f}", t.chance), cell(t.score),
                         cell(t.map), cell(t.ndcg));
    }
    s += fmt::format("| all | {} | {:.4f} | - | - | - | - |\n", r.items, r.aggregate_accuracy);
    return s;
}

}  // namespace exo2ego::eval
