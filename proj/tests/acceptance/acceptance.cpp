// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
//
//   acceptance [work_dir]
//
// Training runs go to work_dir (default: a temporary directory that is
// removed afterwards).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "exo2ego/cli/commands.hpp"
#include "exo2ego/corpus/narration.hpp"
#include "exo2ego/eval/items.hpp"
#include "exo2ego/eval/metrics.hpp"
#include "exo2ego/losses/losses.hpp"
#include "exo2ego/models/lora.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace exo2ego;
namespace fs = std::filesystem;
using trainer::StageId;
using V = ag::Var<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------- clip expansion

struct Interval {
    std::size_t index;
    double start;
    double end;
};

/// Direct evaluation of the half-width rule: beta from the telescoped gap
/// sum, alpha fallback for tracks without a positive gap, neighbour clamp,
/// zero-length drop.
std::vector<Interval> direct_expansion(const std::vector<double>& t, double duration, double alpha) {
    const std::size_t n = t.size();
    const double span = t.back() - t.front();
    const double beta = n > 1 && span > 0.0 ? span / static_cast<double>(n - 1) : alpha;
    const double h = beta / (2.0 * alpha);
    std::vector<Interval> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = i == 0 ? 0.0 : t[i - 1];
        const double hi = i + 1 == n ? duration : t[i + 1];
        const double s = std::max(t[i] - h, lo);
        const double e = std::min(t[i] + h, hi);
        const bool repeat = i > 0 && t[i] == t[i - 1];
        if (!repeat && e > s) {
            out.push_back({i, s, e});
        }
    }
    return out;
}

corpus::NarrationTrack make_track(const std::vector<double>& ts, double duration, std::size_t id) {
    corpus::NarrationTrack tr;
    tr.video_id = fmt::format("v{}", id);
    tr.duration_s = duration;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        tr.entries.push_back({ts[i], fmt::format("C does step {}", i)});
    }
    return tr;
}

Outcome criterion1() {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::vector<std::vector<double>> stamps;
    std::vector<corpus::NarrationTrack> tracks;
    for (std::size_t k = 0; k < 200; ++k) {
        const std::size_t n = 5 + rng.index(46);
        std::vector<double> ts;
        double t = rng.uniform(0.0, 3.0);
        for (std::size_t i = 0; i < n; ++i) {
            ts.push_back(t);
            t += rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.01, 5.0);
        }
        const double duration = ts.back() + rng.uniform(0.0, 3.0);
        stamps.push_back(ts);
        tracks.push_back(make_track(ts, duration, k));
    }
    double beta_sum = 0.0;
    int beta_n = 0;
    for (const auto& ts : stamps) {
        if (ts.back() > ts.front()) {
            beta_sum += (ts.back() - ts.front()) / static_cast<double>(ts.size() - 1);
            ++beta_n;
        }
    }
    const double corpus_alpha = beta_sum / beta_n;
    double worst = 0.0;
    std::size_t compared = 0;
    std::size_t crossings = 0;
    std::size_t count_errors = 0;
    if (std::abs(corpus::compute_alpha(tracks) - corpus_alpha) > 1e-9) {
        return {false, fmt::format("alpha {} vs direct {}", corpus::compute_alpha(tracks), corpus_alpha)};
    }
    for (std::size_t k = 0; k < tracks.size(); ++k) {
        for (const double alpha : {corpus_alpha, rng.uniform(0.05, 4.0)}) {
            const auto got = corpus::expand_narrations(tracks[k], alpha);
            const auto want = direct_expansion(stamps[k], tracks[k].duration_s, alpha);
            if (got.clips.size() != want.size() || got.clips.size() + got.dropped_zero_length != stamps[k].size()) {
                ++count_errors;
                continue;
            }
            for (std::size_t i = 0; i < want.size(); ++i) {
                const auto& c = got.clips[i];
                if (c.index != want[i].index) {
                    ++count_errors;
                }
                worst = std::max({worst, std::abs(c.start_s - want[i].start), std::abs(c.end_s - want[i].end)});
                ++compared;
                for (std::size_t j = 0; j < stamps[k].size(); ++j) {
                    const double tj = stamps[k][j];
                    if (tj != stamps[k][c.index] && tj > c.start_s && tj < c.end_s) {
                        ++crossings;
                    }
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = count_errors == 0 && worst <= 1e-9 && crossings == 0 && compared > 0 && secs < 10.0;
    return {ok, fmt::format("400 expansions, {} intervals, max endpoint error {:.3g}, {} count/index mismatches, {} "
                            "neighbour crossings, {:.2f} s",
                            compared, worst, count_errors, crossings, secs)};
}

Outcome criterion2() {
    const auto out = corpus::expand_narrations(make_track({10.0, 12.0, 16.0}, 20.0, 0), 1.92);
    const double want[3][2] = {{9.21875, 10.78125}, {11.21875, 12.78125}, {15.21875, 16.78125}};
    if (out.clips.size() != 3) {
        return {false, fmt::format("{} intervals", out.clips.size())};
    }
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        worst = std::max({worst, std::abs(out.clips[i].start_s - want[i][0]), std::abs(out.clips[i].end_s - want[i][1])});
    }
    std::string got;
    for (const auto& c : out.clips) {
        got += fmt::format("({}, {}) ", c.start_s, c.end_s);
    }
    return {worst <= 1e-9, fmt::format("{}max error {:.3g}", got, worst)};
}

// ---------------------------------------------------------------- gradients

Outcome criterion3() {
    using namespace exo2ego::testing;
    const auto t0 = Clock::now();
    auto m = models::init_model<double>(tiny_model_config());
    jitter_params(m, 31);
    Rng rng(32);
    const V ego_frames(random_matrix(rng, 16, 12));
    const V exo_frames(random_matrix(rng, 16, 10));
    const std::vector<int> toks{11, 2, 3, 4, 5, 6, 8, 1};
    const std::vector<unsigned char> mask{0, 0, 1, 1, 1, 1, 1, 1};
    auto fmap = [&](const V& v) { return models::map_apply(m, models::MapDir::F, v); };
    auto gmap = [&](const V& v) { return models::map_apply(m, models::MapDir::G, v); };
    auto ccl_terms = [&] {
        const V x = models::encode(m, synth::View::ego, ego_frames);
        const V y = models::encode(m, synth::View::exo, exo_frames);
        const std::vector<V> xs{x};
        const std::vector<V> ys{y};
        return losses::ccl<double>(fmap, gmap, xs, ys);
    };

    struct Case {
        std::string name;
        std::vector<std::string> leaves;
        std::function<V()> loss;
    };
    const V prefix(random_matrix(rng, 4, 8));
    std::vector<Case> cases = {
        {"vtg", {"lm.*"}, [&] { return losses::vtg_loss(models::lm_logits(m, prefix, toks), toks, mask); }},
        {"ccl-forward", {"enc_ego.*", "enc_exo.*", "map_f.*", "map_g.*"}, [&] { return ccl_terms().forward; }},
        {"ccl-backward", {"enc_ego.*", "enc_exo.*", "map_f.*", "map_g.*"}, [&] { return ccl_terms().backward; }},
        {"kl",
         {"enc_ego.*", "enc_exo.*", "map_f.*"},
         [&] {
             const V x = models::encode(m, synth::View::ego, ego_frames);
             const V y = models::encode(m, synth::View::exo, exo_frames);
             return losses::kl_align(y, fmap(x), 0.7);
         }},
        {"end-to-end",
         {"enc_ego.*", "map_f.*", "lm.*"},
         [&] {
             const V x = models::encode(m, synth::View::ego, ego_frames);
             const V p = models::concat_guidance(x, fmap(x));
             return losses::vtg_loss(models::lm_logits(m, p, toks), toks, mask);
         }},
    };
    bool ok = true;
    std::string detail;
    std::uint64_t seed = 40;
    for (auto& c : cases) {
        auto leaves = leaves_matching(m, c.leaves);
        const auto r = check_gradients(c.loss, leaves, 150, seed++);
        const bool good = r.checked >= 100 && r.max_rel_error <= 1e-4;
        ok = ok && good;
        detail += fmt::format("{} {} params max rel {:.2e}; ", c.name, r.checked, r.max_rel_error);
        if (!good) {
            detail += fmt::format("worst {}; ", r.worst);
        }
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 120.0;
    return {ok, detail + fmt::format("{:.1f} s", secs)};
}

// ---------------------------------------------------------------- LoRA

Outcome criterion7() {
    using exo2ego::testing::random_matrix;
    double worst_identity = 0.0;
    float worst_merge = 0.0f;
    int count_errors = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(700 + s);
        auto cfg = exo2ego::testing::tiny_model_config();
        cfg.d = 4 + 2 * static_cast<int>(rng.index(6));
        cfg.lm_heads = rng.index(2) == 0 ? 1 : 2;
        cfg.lm_mlp_mult = 1 + static_cast<int>(rng.index(3));
        cfg.lm_blocks = 1 + static_cast<int>(rng.index(3));
        cfg.seed = s;
        auto m = models::init_model<float>(cfg);
        models::LoRAConfig lc;
        lc.rank = 1 + static_cast<int>(rng.index(8));
        lc.alpha = rng.uniform(0.5, 4.0) * lc.rank;

        const ag::Var<float> prefix(random_matrix(rng, 5, cfg.d).cast<float>());
        const std::vector<int> toks{3, 4, 5, 6, 7};
        const Matrix<float> base = models::lm_logits(m, prefix, toks).value();

        std::size_t expected = 0;
        const auto targets = models::lora_targets(m, lc);
        for (const auto& w : targets) {
            expected += static_cast<std::size_t>(lc.rank) * static_cast<std::size_t>(m.params.at(w).rows() + m.params.at(w).cols());
        }
        const auto before = m.params.scalar_count();
        const auto added = models::lora_wrap(m, lc);
        if (added != expected || m.params.scalar_count() - before != expected ||
            targets.size() != static_cast<std::size_t>(6 * cfg.lm_blocks)) {
            ++count_errors;
        }
        const Matrix<float> wrapped = models::lm_logits(m, prefix, toks).value();
        worst_identity = std::max(worst_identity, static_cast<double>((base - wrapped).cwiseAbs().maxCoeff()));

        for (const auto& n : m.params.match({"lora.*.B"})) {
            m.params.at(n).mutable_value() =
                random_matrix(rng, m.params.at(n).rows(), m.params.at(n).cols(), 0.1).cast<float>();
        }
        const Matrix<float> adapted = models::lm_logits(m, prefix, toks).value();
        models::lora_merge(m);
        const Matrix<float> merged = models::lm_logits(m, prefix, toks).value();
        worst_merge = std::max(worst_merge, (adapted - merged).cwiseAbs().maxCoeff());
    }
    const bool ok = worst_identity == 0.0 && worst_merge <= 1e-5f && count_errors == 0;
    return {ok, fmt::format("20 configs: wrap max abs diff {}, merge max abs diff {:.2e}, {} count mismatches",
                            worst_identity, worst_merge, count_errors)};
}

// ---------------------------------------------------------------- harness

double set_cosine(const std::string& a, const std::string& b) {
    const auto wa = eval::word_tokens(a);
    const auto wb = eval::word_tokens(b);
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

/// Full sort by (similarity desc, text asc, first position asc) over the
/// distinct entries not in `exclude`, first n kept.
std::set<std::string> full_sort_top(const std::string& anchor, const std::vector<std::string>& pool,
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
    for (std::size_t k = 0; k < n && k < all.size(); ++k) {
        out.insert(std::get<1>(all[k]));
    }
    return out;
}

std::vector<std::string> random_pool(Rng& rng, std::size_t size) {
    static const std::vector<std::string> words = {"pour", "water", "milk", "drink", "chop", "carrot", "cup", "open",
                                                   "close", "the", "drawer", "knife", "bowl", "wipe", "lid", "stir"};
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

Outcome criterion8() {
    const auto sim = eval::bow_cosine();
    Rng rng(808);
    int mcq_mismatch = 0;
    int expand_mismatch = 0;
    int expanded = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> pool;
        do {
            pool = random_pool(rng, 12 + rng.index(30));
        } while (std::set<std::string>(pool.begin(), pool.end()).size() < 10);
        const std::string gold = pool[rng.index(pool.size())];
        const auto item = eval::build_mcq(fmt::format("a{}", trial), gold, pool, 4, sim, 17);
        std::set<std::string> distractors;
        for (std::size_t i = 0; i < item.candidates.size(); ++i) {
            if (static_cast<int>(i) != item.gold_index) {
                distractors.insert(item.candidates[i]);
            }
        }
        if (item.gold() != gold || distractors != full_sort_top(gold, pool, {gold}, 4)) {
            ++mcq_mismatch;
        }
        const auto ex = eval::expand_candidates(item, pool, sim);
        const std::set<std::string> have(item.candidates.begin(), item.candidates.end());
        const std::set<std::string> added(ex.candidates.begin() + 5, ex.candidates.end());
        if (ex.candidates.size() != 10 || ex.gold() != gold || added != full_sort_top(gold, pool, have, 5)) {
            ++expand_mismatch;
        }
        ++expanded;
    }
    const std::vector<unsigned char> rel = {1, 0, 1};
    const double ap = eval::mean_ap({rel});
    const double ap_hand = (1.0 / 1.0 + 2.0 / 3.0) / 2.0;
    const std::vector<double> ranked = {0, 2, 3};
    const std::vector<double> ideal = {3, 2, 0};
    const double nd = eval::ndcg(ranked, ideal);
    const double nd_hand = (0.0 / std::log2(2.0) + 2.0 / std::log2(3.0) + 3.0 / std::log2(4.0)) /
                           (3.0 / std::log2(2.0) + 2.0 / std::log2(3.0) + 0.0 / std::log2(4.0));
    const bool ok = mcq_mismatch == 0 && expand_mismatch == 0 && std::abs(ap - ap_hand) <= 1e-9 &&
                    std::abs(nd - nd_hand) <= 1e-9 && std::abs(nd - 0.648041) <= 1e-6;
    return {ok, fmt::format("1000 pools: {} mcq and {} expansion mismatches over {} expansions; mAP {:.10f} (hand "
                            "{:.10f}); nDCG {:.10f} (hand {:.10f})",
                            mcq_mismatch, expand_mismatch, expanded, ap, ap_hand, nd, nd_hand)};
}

// ---------------------------------------------------------------- training runs

cli::RunConfig toy_config(const fs::path& run, std::uint64_t seed, std::uint64_t model_seed) {
    cli::RunConfig c;
    c.seed = seed;
    c.synth.seed = seed;
    c.model.seed = model_seed;
    c.output_dir = run;
    return c;
}

/// Loss totals per step from a stage's NDJSON log.
std::vector<double> logged_losses(const fs::path& file) {
    std::ifstream in(file);
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        out.push_back(Json::parse(line).at("loss").at("total").get<double>());
    }
    return out;
}

struct SmokeRun {
    fs::path dir;
    cli::RunConfig cfg;
    double seconds = 0.0;
    std::map<std::string, double> stage_seconds;
};

Outcome criterion9(SmokeRun& run) {
    const auto t0 = Clock::now();
    std::ostringstream sink;
    cli::cmd_synth(run.cfg, false, sink);
    cli::TrainOptions opt;
    cli::cmd_train(run.cfg, opt, sink);
    const auto res = cli::cmd_eval(run.cfg, {}, sink);
    cli::cmd_report({run.dir}, run.dir / "report", true, sink);
    run.seconds = seconds_since(t0);

    bool ok = run.seconds < 600.0 && fs::exists(run.dir / "report" / "report.md");
    std::string detail = fmt::format("pipeline {:.1f} s; ", run.seconds);
    for (StageId s : trainer::kAllStages) {
        const auto name = trainer::to_string(s);
        const auto curve = logged_losses(run.dir / "logs" / fmt::format("{}.ndjson", name));
        const std::size_t k = std::max<std::size_t>(1, curve.size() / 10);
        double lead = 0.0;
        double trail = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            lead += curve[i] / static_cast<double>(k);
            trail += curve[curve.size() - 1 - i] / static_cast<double>(k);
        }
        ok = ok && !curve.empty() && trail < lead;
        detail += fmt::format("{} {:.4f} -> {:.4f}; ", name, lead, trail);
        run.stage_seconds[name] =
            read_json(run.dir / "reports" / fmt::format("train_{}.json", name)).at("report").at("wall_time_s").get<double>();
    }
    std::size_t mcq_items = 0;
    std::size_t mcq_right = 0;
    for (const auto& p : res.predictions) {
        if (p.task_type == eval::TaskType::mcq) {
            ++mcq_items;
            mcq_right += p.correct ? 1 : 0;
        }
    }
    const double acc = mcq_items ? static_cast<double>(mcq_right) / static_cast<double>(mcq_items) : 0.0;
    ok = ok && mcq_items == 500 && acc >= 0.26;
    detail += fmt::format("post-s3 5-way MCQ {}/{} = {:.3f}", mcq_right, mcq_items, acc);
    return {ok, detail};
}

std::string param_digest(const ag::Var<float>& v) {
    const auto& x = v.value();
    std::string bytes = fmt::format("{}x{}:", x.rows(), x.cols());
    bytes.append(reinterpret_cast<const char*>(x.data()), static_cast<std::size_t>(x.size()) * sizeof(float));
    return fnv1a_hex(bytes);
}

std::map<std::string, std::string> digests(const models::Model<float>& m) {
    std::map<std::string, std::string> out;
    for (const auto& n : m.params.names()) {
        out[n] = param_digest(m.params.at(n));
    }
    return out;
}

/// The reference schedule: everything outside these patterns is frozen.
const std::map<StageId, std::vector<std::string>> kTrainable = {
    {StageId::init, {"enc_ego.*", "enc_exo.*"}},
    {StageId::s1, {"enc_exo.*"}},
    {StageId::s2, {"enc_ego.*", "map_f.*", "map_g.*"}},
    {StageId::s3, {"enc_ego.*", "map_f.*", "lora.*"}},
};

Outcome criterion4(const SmokeRun& run) {
    const cli::RunPaths paths{run.dir};
    const auto ds = synth::load_dataset(paths.dataset());
    const auto instr = trainer::caption_instructions(run.cfg.synth.seed);
    const auto profile = trainer::parse_profile(run.cfg.profile);

    // State entering init: fresh model after the LM warm start.
    trainer::TrainState<float> start{
        models::init_model<float>(trainer::model_config_for(ds.cfg.world, run.cfg.model, instr))};
    std::vector<std::string> texts;
    for (const auto& c : ds.splits.train) {
        texts.push_back(c.text);
    }
    trainer::warm_start_lm(start, texts, profile.lm_warmup_epochs, profile.lm_warmup_batch, profile.lm_warmup_lr,
                           run.cfg.model.seed);
    auto before = digests(start.model);

    bool ok = true;
    std::string detail;
    double total = 0.0;
    for (StageId s : trainer::kAllStages) {
        const auto plan = trainer::stage_plan(s, profile, "none", cli::overrides_for(run.cfg, s));
        const auto& train = kTrainable.at(s);
        if (std::set(plan.trainable.begin(), plan.trainable.end()) != std::set(train.begin(), train.end())) {
            ok = false;
            detail += fmt::format("{} plan trains a different set; ", trainer::to_string(s));
        }
        const auto after = digests(trainer::load_checkpoint<float>(paths.checkpoint(s)).model);
        std::size_t frozen = 0;
        std::size_t changed = 0;
        std::size_t moved = 0;
        for (const auto& [name, d] : after) {
            if (models::matches_any(train, name)) {
                moved += before.contains(name) && before.at(name) != d ? 1 : 0;
                continue;
            }
            ++frozen;
            if (!before.contains(name) || before.at(name) != d) {
                ++changed;
                detail += fmt::format("{} changed {}; ", trainer::to_string(s), name);
            }
        }
        ok = ok && changed == 0 && frozen > 0 && moved > 0;
        total += run.stage_seconds.at(trainer::to_string(s));
        detail += fmt::format("{}: {} frozen identical, {} trainable moved; ", trainer::to_string(s), frozen - changed, moved);
        before = after;
    }
    ok = ok && total < 300.0;
    return {ok, detail + fmt::format("stages {:.1f} s", total)};
}

/// Held-out alignment of F measured directly on the first `n` test pairs.
struct Alignment {
    double cycle = 0.0;
    double kl = 0.0;
    double top1 = 0.0;
};

Matrix<double> softmax_rows(const Matrix<double>& z, double t) {
    Matrix<double> p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double mx = z.row(r).maxCoeff() / t;
        double sum = 0.0;
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            p(r, c) = std::exp(z(r, c) / t - mx);
            sum += p(r, c);
        }
        p.row(r) /= sum;
    }
    return p;
}

Alignment measure_alignment(models::Model<float>& m, std::span<const synth::ClipPair> clips, std::size_t n, double temp) {
    using VF = ag::Var<float>;
    std::vector<const synth::ClipPair*> ptrs;
    for (std::size_t i = 0; i < n; ++i) {
        ptrs.push_back(&clips[i]);
    }
    const std::vector<int> zeros(n, 0);
    const VF x = models::encode(m, synth::View::ego, VF(trainer::stack_clips<float>(ptrs, synth::View::ego, zeros)));
    const VF y = trainer::exo_targets(m, std::span<const synth::ClipPair* const>(ptrs));
    const VF fx = models::map_apply(m, models::MapDir::F, x);
    const Matrix<double> xd = x.value().cast<double>();
    const Matrix<double> yd = y.value().cast<double>();
    const Matrix<double> fxd = fx.value().cast<double>();
    const Matrix<double> gfx = models::map_apply(m, models::MapDir::G, fx).value().cast<double>();
    const Matrix<double> fgy =
        models::map_apply(m, models::MapDir::F, models::map_apply(m, models::MapDir::G, y)).value().cast<double>();

    Alignment a;
    a.cycle = 0.5 * ((gfx - xd).cwiseAbs().mean() + (fgy - yd).cwiseAbs().mean());
    const Matrix<double> p = softmax_rows(yd, temp);
    const Matrix<double> q = softmax_rows(fxd, temp);
    a.kl = (p.array() * (p.array().log() - q.array().log())).sum() / static_cast<double>(p.rows());

    const Eigen::Index f = synth::kClipFrames;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d =
                (fxd.middleRows(static_cast<Eigen::Index>(i) * f, f) - yd.middleRows(static_cast<Eigen::Index>(j) * f, f))
                    .cwiseAbs()
                    .sum();
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        hits += arg == i ? 1 : 0;
    }
    a.top1 = static_cast<double>(hits) / static_cast<double>(n);
    return a;
}

Outcome criterion5(const SmokeRun& run) {
    const cli::RunPaths paths{run.dir};
    const auto ds = synth::load_dataset(paths.dataset());
    if (ds.cfg.world.mode != synth::RenderMode::linear || ds.splits.test.size() < 100) {
        return {false, "needs a linear-mode dataset with at least 100 held-out pairs"};
    }
    const double temp = trainer::stage_plan(StageId::s2, trainer::parse_profile(run.cfg.profile), "none",
                                            cli::overrides_for(run.cfg, StageId::s2))
                            .losses.kl_temperature;
    auto start = trainer::load_checkpoint<float>(paths.checkpoint(StageId::s1));
    auto end = trainer::load_checkpoint<float>(paths.checkpoint(StageId::s2));
    const auto a = measure_alignment(start.model, ds.splits.test, 100, temp);
    const auto b = measure_alignment(end.model, ds.splits.test, 100, temp);
    const double secs = run.stage_seconds.at("s2");
    const double cycle_ratio = a.cycle / b.cycle;
    const double kl_ratio = a.kl / b.kl;
    const bool ok = cycle_ratio >= 10.0 && kl_ratio >= 5.0 && b.top1 >= 0.9 && secs <= 300.0;
    return {ok, fmt::format("100 held-out pairs: cycle {:.4f} -> {:.5f} ({:.1f}x), KL {:.5f} -> {:.6f} ({:.1f}x), "
                            "top-1 {:.2f} -> {:.2f}; stage 2 {:.1f} s",
                            a.cycle, b.cycle, cycle_ratio, a.kl, b.kl, kl_ratio, a.top1, b.top1, secs)};
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Outcome criterion6(const fs::path& work, const SmokeRun& seed1) {
    const std::vector<std::string> ablations = {"none", "fwd-only-ccl", "no-ccl", "no-kl"};
    std::map<std::string, std::vector<double>> top1;
    std::string detail;
    for (std::uint64_t k = 1; k <= 3; ++k) {
        fs::path dir = seed1.dir;
        cli::RunConfig cfg = seed1.cfg;
        std::ostringstream sink;
        if (k != 1) {
            dir = work / fmt::format("ablation_seed{}", k);
            cfg = toy_config(dir, k, k + 2);
            cli::cmd_synth(cfg, false, sink);
            cli::TrainOptions opt;
            opt.stage = "init";
            cli::cmd_train(cfg, opt, sink);
            opt.stage = "s1";
            cli::cmd_train(cfg, opt, sink);
        }
        const cli::RunPaths paths{dir};
        const auto ds = synth::load_dataset(paths.dataset());
        const auto instr = trainer::caption_instructions(cfg.synth.seed);
        const trainer::StageData data{ds.splits.train, ds.splits.test, instr};
        const auto profile = trainer::parse_profile(cfg.profile);
        detail += fmt::format("seed {}:", k);
        for (const auto& abl : ablations) {
            auto st = trainer::load_checkpoint<float>(paths.checkpoint(StageId::s1));
            auto sc = trainer::stage_plan(StageId::s2, profile, abl, cli::overrides_for(cfg, StageId::s2));
            sc.seed = cfg.model.seed;
            trainer::run_stage(st, sc, data, nullptr);
            const double r = measure_alignment(st.model, ds.splits.test, 100, sc.losses.kl_temperature).top1;
            top1[abl].push_back(r);
            detail += fmt::format(" {} {:.2f}", abl, r);
        }
        detail += "; ";
    }
    const double full = median3(top1["none"]);
    const double fwd = median3(top1["fwd-only-ccl"]);
    const double noccl = median3(top1["no-ccl"]);
    const double nokl = median3(top1["no-kl"]);
    const bool ok = full >= fwd && fwd >= noccl && full >= nokl;
    return {ok, detail + fmt::format("medians: full {:.2f} >= fwd-only {:.2f} >= no-ccl {:.2f}; with-KL {:.2f} >= "
                                     "without {:.2f}",
                                     full, fwd, noccl, full, nokl)};
}

}  // namespace

int main(int argc, char** argv) {
    const bool temp = argc < 2;
    const fs::path work = temp ? fs::temp_directory_path() / fmt::format("exo2ego_acceptance_{}", ::getpid()) : fs::path(argv[1]);
    fs::remove_all(work);
    fs::create_directories(work);

    std::map<int, Outcome> results;
    auto run = [&](int id, const std::function<Outcome()>& fn) {
        const auto t0 = Clock::now();
        try {
            results[id] = fn();
        } catch (const std::exception& e) {
            results[id] = {false, fmt::format("exception: {}", e.what())};
        }
        std::cerr << fmt::format("[criterion {} done in {:.1f} s]\n", id, seconds_since(t0));
    };

    run(1, criterion1);
    run(2, criterion2);
    run(3, criterion3);
    run(7, criterion7);
    run(8, criterion8);

    SmokeRun smoke;
    smoke.dir = work / "toy";
    smoke.cfg = toy_config(smoke.dir, 1, 3);
    run(9, [&] { return criterion9(smoke); });
    const bool have_run = results[9].detail.find("exception") != 0;
    run(4, [&] { return have_run ? criterion4(smoke) : Outcome{false, "toy pipeline did not run"}; });
    run(5, [&] { return have_run ? criterion5(smoke) : Outcome{false, "toy pipeline did not run"}; });
    run(6, [&] { return have_run ? criterion6(work, smoke) : Outcome{false, "toy pipeline did not run"}; });

    bool all = true;
    for (const auto& [id, r] : results) {
        std::cout << fmt::format("criterion {}: {} - {}\n", id, r.pass ? "PASS" : "FAIL", r.detail);
        all = all && r.pass;
    }
    if (temp) {
        fs::remove_all(work);
    }
    return all ? 0 : 1;
}
