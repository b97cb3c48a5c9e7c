// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "exo2ego/eval/harness.hpp"
#include "exo2ego/eval/items.hpp"
#include "exo2ego/eval/metrics.hpp"
#include "exo2ego/synthworld/dataset_io.hpp"

using namespace exo2ego;
using namespace exo2ego::eval;
namespace fs = std::filesystem;

namespace {

double set_cosine(const std::string& a, const std::string& b) {
    const auto wa = word_tokens(a);
    const auto wb = word_tokens(b);
    const std::set<std::string> sa(wa.begin(), wa.end());
    const std::set<std::string> sb(wb.begin(), wb.end());
    if (sa.empty() || sb.empty()) {
        return 0.0;
    }
    double inter = 0.0;
    for (const auto& w : sa) {
        inter += sb.contains(w) ? 1.0 : 0.0;
    }
    return inter / std::sqrt(static_cast<double>(sa.size()) * static_cast<double>(sb.size()));
}

/// Full sort of (score desc, text asc, first position asc) over the distinct
/// non-excluded pool entries.
std::set<std::string> oracle_top(const std::string& anchor, const std::vector<std::string>& pool,
                                 const std::set<std::string>& exclude, std::size_t n) {
    std::map<std::string, std::size_t> first;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!exclude.contains(pool[i])) {
            first.emplace(pool[i], i);
        }
    }
    std::vector<std::tuple<double, std::string, std::size_t>> all;
    for (const auto& [s, i] : first) {
        all.emplace_back(-set_cosine(anchor, s), s, i);
    }
    std::sort(all.begin(), all.end());
    std::set<std::string> out;
    for (std::size_t k = 0; k < n; ++k) {
        out.insert(std::get<1>(all[k]));
    }
    return out;
}

std::vector<std::string> random_pool(Rng& rng, std::size_t size) {
    static const std::vector<std::string> words = {"pour", "water", "milk", "drink", "chop", "carrot", "cup",
                                                   "open", "close", "the", "drawer", "knife", "bowl", "wipe"};
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t len = 1 + rng.index(4);
        std::string s;
        for (std::size_t k = 0; k < len; ++k) {
            s += (k ? " " : "") + words[rng.index(words.size())];
        }
        pool.push_back(s);
    }
    return pool;
}

std::vector<std::string> distractors(const EvalItem& it) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < it.candidates.size(); ++i) {
        if (static_cast<int>(i) != it.gold_index) {
            out.push_back(it.candidates[i]);
        }
    }
    return out;
}

}  // namespace

TEST(Similarity, BowCosineProperties) {
    const auto sim = bow_cosine();
    EXPECT_DOUBLE_EQ(sim("pour water", "pour water"), 1.0);
    EXPECT_DOUBLE_EQ(sim("Pour the WATER!", "pour the water"), 1.0);
    EXPECT_DOUBLE_EQ(sim("pour water", "pour milk"), 0.5);
    EXPECT_DOUBLE_EQ(sim("pour water", "chop carrot"), 0.0);
    EXPECT_DOUBLE_EQ(sim("", "pour"), 0.0);
    EXPECT_DOUBLE_EQ(sim("", ""), 0.0);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto p = random_pool(rng, 2);
        EXPECT_DOUBLE_EQ(sim(p[0], p[1]), sim(p[1], p[0]));
        EXPECT_DOUBLE_EQ(sim(p[0], p[1]), set_cosine(p[0], p[1]));
        EXPECT_DOUBLE_EQ(sim(p[0], p[0]), 1.0);
    }
}

TEST(BuildMcq, HandExample) {
    const std::vector<std::string> pool = {"pour water", "pour milk", "drink water", "chop carrot"};
    const auto it = build_mcq("q1", "pour water", pool, 2, bow_cosine(), 1);
    const auto d = distractors(it);
    EXPECT_EQ(std::set<std::string>(d.begin(), d.end()), (std::set<std::string>{"pour milk", "drink water"}));
    EXPECT_EQ(it.gold(), "pour water");
    EXPECT_EQ(it.candidates.size(), 3u);
}

TEST(BuildMcq, WholePoolWhenKIsPoolSizeMinusOne) {
    const std::vector<std::string> pool = {"a b", "c d", "e f", "g h", "i j"};
    const auto it = build_mcq("q", "c d", pool, 4, bow_cosine(), 9);
    EXPECT_EQ(std::set<std::string>(it.candidates.begin(), it.candidates.end()),
              std::set<std::string>(pool.begin(), pool.end()));
}

TEST(BuildMcq, TiesBreakLexicographically) {
    const std::vector<std::string> pool = {"pour water", "pour tea", "pour milk", "stir"};
    const auto it = build_mcq("q", "pour water", pool, 1, bow_cosine(), 2);
    EXPECT_EQ(distractors(it), std::vector<std::string>{"pour milk"});
}

TEST(BuildMcq, Errors) {
    const std::vector<std::string> pool = {"pour water", "pour milk", "pour milk"};
    EXPECT_THROW(build_mcq("q", "pour water", pool, 2, bow_cosine(), 1), Error);
    EXPECT_THROW(build_mcq("q", "drink", pool, 1, bow_cosine(), 1), Error);
    EXPECT_NO_THROW(build_mcq("q", "pour water", pool, 1, bow_cosine(), 1));
}

TEST(BuildMcq, MatchesFullSortOracleOnRandomPools) {
    Rng rng(2024);
    const auto sim = bow_cosine();
    int built = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto pool = random_pool(rng, 6 + rng.index(25));
        const std::string gold = pool[rng.index(pool.size())];
        const std::set<std::string> distinct(pool.begin(), pool.end());
        const int k = 1 + static_cast<int>(rng.index(5));
        if (distinct.size() < static_cast<std::size_t>(k) + 1) {
            EXPECT_THROW(build_mcq("t", gold, pool, k, sim, 5), Error);
            continue;
        }
        const auto it = build_mcq(fmt::format("t{}", trial), gold, pool, k, sim, 5);
        const auto d = distractors(it);
        ASSERT_EQ(std::set<std::string>(d.begin(), d.end()), oracle_top(gold, pool, {gold}, static_cast<std::size_t>(k)))
            << "trial " << trial;
        ASSERT_EQ(it.gold(), gold);
        ++built;
    }
    EXPECT_GT(built, 900);
}

TEST(BuildMcq, ShuffleDependsOnlyOnItemIdAndSeed) {
    const std::vector<std::string> pool = {"pour water", "pour milk", "drink water", "chop carrot", "stir tea"};
    const auto sim_a = bow_cosine();
    (void)sim_a.embed("unrelated words first");
    const auto a = build_mcq("item-7", "pour water", pool, 4, sim_a, 11);
    const auto b = build_mcq("item-7", "pour water", pool, 4, bow_cosine(), 11);
    EXPECT_EQ(a, b);
    std::array<int, 5> at{};
    for (int i = 0; i < 1000; ++i) {
        ++at[static_cast<std::size_t>(build_mcq(fmt::format("i{}", i), "pour water", pool, 4, sim_a, 11).gold_index)];
    }
    for (int c : at) {
        EXPECT_GT(c, 140);
        EXPECT_LT(c, 260);
    }
}

TEST(ExpandCandidates, AddsTopFiveOfRemainingPool) {
    Rng rng(77);
    const auto sim = bow_cosine();
    int done = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto pool = random_pool(rng, 12 + rng.index(30));
        const std::string gold = pool[rng.index(pool.size())];
        const std::set<std::string> distinct(pool.begin(), pool.end());
        if (distinct.size() < 10) {
            continue;
        }
        const auto base = build_mcq(fmt::format("e{}", trial), gold, pool, 4, sim, 3);
        const auto ex = expand_candidates(base, pool, sim);
        ASSERT_EQ(ex.candidates.size(), 10u);
        EXPECT_EQ(ex.gold_index, base.gold_index);
        EXPECT_EQ(ex.gold(), gold);
        EXPECT_TRUE(std::equal(base.candidates.begin(), base.candidates.end(), ex.candidates.begin()));
        EXPECT_NO_THROW(ex.validate());
        const std::set<std::string> added(ex.candidates.begin() + 5, ex.candidates.end());
        const std::set<std::string> have(base.candidates.begin(), base.candidates.end());
        ASSERT_EQ(added, oracle_top(gold, pool, have, 5)) << "trial " << trial;
        ++done;
    }
    EXPECT_GT(done, 500);
}

TEST(ExpandCandidates, ExactAndInsufficientPools) {
    const std::vector<std::string> base_pool = {"a", "b", "c", "d", "e"};
    const auto base = build_mcq("x", "a", base_pool, 4, bow_cosine(), 1);
    std::vector<std::string> pool = base_pool;
    for (const char* s : {"f", "g", "h", "i", "j"}) {
        pool.emplace_back(s);
    }
    const auto ex = expand_candidates(base, pool, bow_cosine());
    EXPECT_EQ(std::set<std::string>(ex.candidates.begin() + 5, ex.candidates.end()),
              (std::set<std::string>{"f", "g", "h", "i", "j"}));
    pool.pop_back();
    EXPECT_THROW(expand_candidates(base, pool, bow_cosine()), Error);
    auto four = base;
    four.candidates.pop_back();
    EXPECT_THROW(expand_candidates(four, pool, bow_cosine()), Error);
}

TEST(ScoreMcq, AccuracyOrderAndMissing) {
    std::vector<EvalItem> items;
    std::map<std::string, int> preds;
    for (int i = 0; i < 5; ++i) {
        EvalItem it;
        it.item_id = fmt::format("m{}", i);
        it.candidates = {"a", "b", "c", "d", "e"};
        it.gold_index = i;
        items.push_back(it);
        preds[it.item_id] = i;
    }
    EXPECT_DOUBLE_EQ(score_mcq(preds, items), 1.0);
    preds["m0"] = 4;
    preds["m3"] = 0;
    EXPECT_DOUBLE_EQ(score_mcq(preds, items), 0.6);
    std::reverse(items.begin(), items.end());
    EXPECT_DOUBLE_EQ(score_mcq(preds, items), 0.6);
    preds.erase("m1");
    preds.erase("m4");
    try {
        score_mcq(preds, items);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("m1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("m4"), std::string::npos);
    }
}

TEST(ScoreOpen, Examples) {
    auto s = score_open("in the drawer", "in the drawer");
    EXPECT_EQ(s.acc, 1);
    EXPECT_DOUBLE_EQ(s.score, 5.0);
    s = score_open("the drawer", "in the drawer");
    EXPECT_EQ(s.acc, 0);
    EXPECT_NEAR(s.score, 10.0 / 3.0, 1e-12);
    s = score_open("knife", "in the drawer");
    EXPECT_EQ(s.acc, 0);
    EXPECT_DOUBLE_EQ(s.score, 0.0);
    EXPECT_EQ(score_open("In the Drawer.", "in drawer").acc, 1);
}

TEST(MeanAp, Examples) {
    const std::vector<unsigned char> r = {1, 0, 1};
    EXPECT_NEAR(average_precision(r), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
    EXPECT_NEAR(average_precision(r), 0.8333333333333333, 1e-9);
    EXPECT_DOUBLE_EQ(mean_ap({{1, 1, 0, 0}}), 1.0);
    for (int rank = 1; rank <= 8; ++rank) {
        std::vector<unsigned char> q(8, 0);
        q[static_cast<std::size_t>(rank - 1)] = 1;
        EXPECT_NEAR(mean_ap({q}), 1.0 / rank, 1e-15);
    }
    EXPECT_THROW(mean_ap({{1, 0}, {0, 0}}), Error);
}

TEST(MeanAp, MatchesDirectFormula) {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<unsigned char>> qs(1 + rng.index(6));
        double expect = 0.0;
        for (auto& q : qs) {
            q.resize(1 + rng.index(20));
            for (auto& f : q) {
                f = rng.uniform() < 0.3 ? 1 : 0;
            }
            q[rng.index(q.size())] = 1;
            double rel = 0.0;
            double sum = 0.0;
            for (std::size_t k = 0; k < q.size(); ++k) {
                if (!q[k]) {
                    continue;
                }
                rel += 1.0;
                double above = 0.0;
                for (std::size_t j = 0; j <= k; ++j) {
                    above += q[j];
                }
                sum += above / static_cast<double>(k + 1);
            }
            expect += sum / rel;
        }
        expect /= static_cast<double>(qs.size());
        EXPECT_NEAR(mean_ap(qs), expect, 1e-12);
    }
}

TEST(Ndcg, Examples) {
    const std::vector<double> ranked = {0, 2, 3};
    const std::vector<double> ideal = {3, 2, 0};
    EXPECT_NEAR(ndcg(ranked, ideal), 0.648041, 1e-6);
    const double dcg_v = 2.0 / std::log2(3.0) + 1.5;
    const double idcg = 3.0 + 2.0 / std::log2(3.0);
    EXPECT_NEAR(ndcg(ranked, ideal), dcg_v / idcg, 1e-12);
    EXPECT_NEAR(ndcg(ranked), dcg_v / idcg, 1e-12);
    EXPECT_DOUBLE_EQ(ndcg(ideal, ideal), 1.0);
    const std::vector<double> padded = {0, 2, 3, 0, 0};
    const std::vector<double> padded_ideal = {3, 2, 0, 0, 0};
    EXPECT_DOUBLE_EQ(ndcg(padded, padded_ideal), ndcg(ranked, ideal));
    const std::vector<double> zeros = {0, 0};
    EXPECT_THROW(ndcg(zeros, zeros), Error);
    const std::vector<double> unsorted = {2, 3, 0};
    EXPECT_THROW(ndcg(ranked, unsorted), Error);
    const std::vector<double> negative = {-1, 2};
    EXPECT_THROW(ndcg(negative), Error);
}

TEST(Ndcg, MatchesDirectFormula) {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> g(1 + rng.index(15));
        for (auto& v : g) {
            v = static_cast<double>(rng.index(4));
        }
        g[rng.index(g.size())] = 1.0 + static_cast<double>(rng.index(3));
        auto ideal = g;
        std::sort(ideal.rbegin(), ideal.rend());
        double d = 0.0;
        double i = 0.0;
        for (std::size_t k = 1; k <= g.size(); ++k) {
            d += g[k - 1] * std::log(2.0) / std::log(static_cast<double>(k) + 1.0);
            i += ideal[k - 1] * std::log(2.0) / std::log(static_cast<double>(k) + 1.0);
        }
        EXPECT_NEAR(ndcg(g), d / i, 1e-12);
    }
}

TEST(Prediction, ArgminInvariantUnderPositiveScaling) {
    Rng rng(12);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> l(2 + rng.index(9));
        for (auto& v : l) {
            v = 0.01 + 5.0 * rng.uniform();
        }
        const int before = argmin_loss(l);
        const double c = std::exp(6.0 * rng.uniform() - 3.0);
        for (auto& v : l) {
            v *= c;
        }
        EXPECT_EQ(argmin_loss(l), before);
    }
    const std::vector<double> ties = {1.0, 0.5, 0.5};
    EXPECT_EQ(argmin_loss(ties), 1);
    EXPECT_EQ(rank_by_loss(ties), (std::vector<int>{1, 2, 0}));
}

TEST(Items, JsonLinesRoundTripAndValidation) {
    const std::vector<std::string> pool = {"pour water", "pour milk", "drink water", "chop carrot", "stir tea",
                                           "wash cup", "open drawer", "close drawer", "cut bread", "eat bread"};
    auto a = build_mcq("r1", "pour water", pool, 4, bow_cosine(), 1);
    a.task_type = TaskType::multilabel;
    a = expand_candidates(a, pool, bow_cosine());
    a.relevant = {a.gold_index, 9};
    a.gains.assign(10, 0.5);
    a.question = "describe";
    a.provenance = {"unit"};
    EvalItem b;
    b.item_id = "o1";
    b.task_type = TaskType::open;
    b.candidates = {"in the drawer"};
    const auto path = fs::temp_directory_path() / "exo2ego_items_test.jsonl";
    const std::vector<EvalItem> items{a, b};
    write_items(path, items);
    EXPECT_EQ(read_items(path), items);
    fs::remove(path);

    EXPECT_THROW(parse_task_type("caption"), Error);
    auto bad = a;
    bad.candidates[1] = bad.candidates[0];
    EXPECT_THROW(bad.validate(), Error);
    bad = a;
    bad.gold_index = 10;
    EXPECT_THROW(bad.validate(), Error);
    bad = a;
    bad.candidates.pop_back();
    bad.gains.pop_back();
    bad.relevant = {0};
    EXPECT_THROW(bad.validate(), Error);
}

namespace {

struct EvalWorld {
    synth::Dataset ds;
    std::vector<std::string> instructions;
    models::Vocab vocab;
    models::ModelConfig mc;
};

const EvalWorld& eval_world() {
    static const EvalWorld w = [] {
        EvalWorld out;
        synth::SynthConfig sc;
        out.ds = synth::synthesize(sc);
        out.instructions = trainer::caption_instructions(sc.seed);
        out.vocab = trainer::make_vocab(sc.world, out.instructions);
        models::ModelConfig base;
        base.seed = 21;
        out.mc = trainer::model_config_for(sc.world, base, out.instructions);
        return out;
    }();
    return w;
}

trainer::TrainState<float> random_model(std::vector<std::string> lineage) {
    trainer::TrainState<float> st{models::init_model<float>(eval_world().mc)};
    st.lineage = std::move(lineage);
    return st;
}

EvalProtocol mcq_only(int n) {
    EvalProtocol p;
    p.tasks = {TaskType::mcq};
    p.mcq_items = n;
    return p;
}

}  // namespace

TEST(SyntheticItems, DeterministicAndWellFormed) {
    const auto& w = eval_world();
    EvalProtocol p;
    p.mcq_items = 50;
    p.retrieval_items = 20;
    p.multilabel_items = 20;
    p.open_items = 10;
    const auto a = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    const auto b = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 100u);
    std::set<std::string> ids;
    for (const auto& it : a) {
        EXPECT_NO_THROW(it.validate());
        ids.insert(it.item_id);
        switch (it.task_type) {
            case TaskType::mcq:
                EXPECT_EQ(it.candidates.size(), 5u);
                break;
            case TaskType::retrieval:
            case TaskType::multilabel:
                EXPECT_EQ(it.candidates.size(), 10u);
                break;
            case TaskType::open:
                EXPECT_EQ(it.candidates.size(), 1u);
                break;
        }
        if (it.task_type == TaskType::multilabel) {
            EXPECT_NE(std::find(it.relevant.begin(), it.relevant.end(), it.gold_index), it.relevant.end());
            EXPECT_DOUBLE_EQ(it.gains[static_cast<std::size_t>(it.gold_index)], 2.0);
        }
    }
    EXPECT_EQ(ids.size(), a.size());
}

TEST(RunEval, RandomModelIsAtChance) {
    const auto& w = eval_world();
    const auto p = mcq_only(500);
    const auto items = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    auto st = random_model({"init"});
    const auto res = run_eval(st, w.vocab, items, index_clips(w.ds.splits.test), p);
    const auto* m = res.report.find(TaskType::mcq);
    ASSERT_NE(m, nullptr);
    EXPECT_EQ(m->items, 500u);
    EXPECT_NEAR(m->chance, 0.2, 1e-12);
    EXPECT_GE(m->accuracy, 0.14);
    EXPECT_LE(m->accuracy, 0.26);
}

TEST(RunEval, CandidateOrderDoesNotChangeCorrectness) {
    const auto& w = eval_world();
    const auto p = mcq_only(60);
    auto items = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    auto st = random_model({"init", "s1", "s2"});
    const auto clips = index_clips(w.ds.splits.test);
    const auto before = run_eval(st, w.vocab, items, clips, p);
    Rng rng(4);
    for (auto& it : items) {
        const std::string gold = it.gold();
        rng.shuffle(it.candidates);
        it.gold_index = static_cast<int>(std::find(it.candidates.begin(), it.candidates.end(), gold) - it.candidates.begin());
    }
    const auto after = run_eval(st, w.vocab, items, clips, p);
    ASSERT_EQ(before.predictions.size(), after.predictions.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        EXPECT_EQ(before.predictions[i].correct, after.predictions[i].correct) << items[i].item_id;
        EXPECT_EQ(before.predictions[i].answer, after.predictions[i].answer) << items[i].item_id;
    }
    EXPECT_TRUE(before.report.guided);
}

TEST(RunEval, DeterministicReportAcrossTasks) {
    const auto& w = eval_world();
    EvalProtocol p;
    p.mcq_items = 20;
    p.retrieval_items = 10;
    p.multilabel_items = 10;
    p.open_items = 5;
    const auto items = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    auto st = random_model({"init"});
    const auto clips = index_clips(w.ds.splits.test);
    const auto a = run_eval(st, w.vocab, items, clips, p);
    const auto b = run_eval(st, w.vocab, items, clips, p);
    EXPECT_EQ(eval_report_to_json(a.report).dump(), eval_report_to_json(b.report).dump());
    ASSERT_EQ(a.report.tasks.size(), 4u);
    EXPECT_EQ(a.report.items, 45u);
    const auto* r = a.report.find(TaskType::retrieval);
    ASSERT_NE(r, nullptr);
    ASSERT_TRUE(r->map && r->ndcg);
    EXPECT_GT(*r->map, 0.0);
    EXPECT_LE(*r->ndcg, 1.0);
    const auto* o = a.report.find(TaskType::open);
    ASSERT_NE(o, nullptr);
    ASSERT_TRUE(o->score.has_value());
    EXPECT_GE(*o->score, 0.0);
    EXPECT_LE(*o->score, 5.0);
    const auto md = eval_report_markdown(a.report);
    EXPECT_NE(md.find("| multilabel | 10 |"), std::string::npos);
    EXPECT_NE(md.find("ego only"), std::string::npos);
}

TEST(RunEval, Preconditions) {
    const auto& w = eval_world();
    const auto p = mcq_only(5);
    auto items = build_synthetic_items(w.ds.splits.test, w.ds.cfg.world, p, w.instructions[0], bow_cosine());
    const auto clips = index_clips(w.ds.splits.test);
    auto untrained = random_model({});
    EXPECT_THROW(run_eval(untrained, w.vocab, items, clips, p), Error);
    auto st = random_model({"init"});
    auto open = items;
    open[0].task_type = TaskType::open;
    open[0].candidates = {open[0].gold()};
    open[0].gold_index = 0;
    EXPECT_THROW(run_eval(st, w.vocab, open, clips, p), Error);
    items[0].clip_id = "nowhere#0";
    EXPECT_THROW(run_eval(st, w.vocab, items, clips, p), Error);
}
