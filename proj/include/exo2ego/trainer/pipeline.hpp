// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Batched stage forward passes, the training loop and held-out alignment
// probes.
//
// Prefixes fed to the LM:
//   init   enc_ego(ego) or enc_exo(exo view), one view per sample
//   s1     enc_exo(exo view)
//   s2/s3  concat_guidance(x, F(x)) with x = enc_ego(ego)
// The exo target of a clip is y = mean over views of enc_exo(exo view).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/common/rng.hpp"
#include "exo2ego/corpus/instructions.hpp"
#include "exo2ego/losses/losses.hpp"
#include "exo2ego/models/lora.hpp"
#include "exo2ego/models/model.hpp"
#include "exo2ego/synthworld/dataset_io.hpp"
#include "exo2ego/trainer/optimizer.hpp"
#include "exo2ego/trainer/stage.hpp"

namespace exo2ego::trainer {

using synth::ClipPair;
using synth::kClipFrames;
using synth::View;

/// Every narration the world can produce plus the instruction bank.
inline models::Vocab make_vocab(const synth::WorldConfig& w, const std::vector<std::string>& instructions) {
    std::vector<std::string> texts = instructions;
    for (int v = 0; v < w.n_verbs; ++v) {
        for (int o = 0; o < w.n_objects; ++o) {
            texts.push_back(synth::narration_text({0.0, v, o}));
        }
    }
    return models::Vocab::from_texts(texts);
}

inline std::vector<std::string> caption_instructions(std::uint64_t seed) {
    return corpus::render_instructions(corpus::builtin_bank_spec("synth-captioning"), seed).instructions;
}

/// Model sized for the dataset's frame widths.
inline models::ModelConfig model_config_for(const synth::WorldConfig& w, models::ModelConfig base,
                                            const std::vector<std::string>& instructions) {
    base.ego_in = w.frame_dim(View::ego);
    base.exo_in = w.frame_dim(View::exo);
    base.vocab = make_vocab(w, instructions).words();
    return base;
}

template <class T>
struct TrainState {
    explicit TrainState(models::Model<T> m) : model(std::move(m)) {}

    models::Model<T> model;
    OptimizerState<T> opt;
    std::vector<std::string> lineage;
    std::vector<std::string> skipped;  ///< stages run without their prerequisite
    models::LoRAConfig lora_plan;      ///< adapters attached when a stage asks for them
    std::string config_hash;
    long global_step = 0;
    bool lm_warm_started = false;
};

/// s1 needs init, s2 needs s1, s3 needs s2. With allow_skip the gap is
/// recorded instead of rejected.
inline std::optional<std::string> missing_prerequisite(const std::vector<std::string>& lineage, StageId stage) {
    if (stage == StageId::init) {
        return std::nullopt;
    }
    const std::string need = to_string(static_cast<StageId>(stage_index(stage) - 1));
    if (std::find(lineage.begin(), lineage.end(), need) == lineage.end()) {
        return need;
    }
    return std::nullopt;
}

struct Sample {
    const ClipPair* pair = nullptr;
    View view = View::ego;
    int exo_view = 0;
    models::TokenizedSample tok;
};

struct StageData {
    std::span<const ClipPair> train;
    std::span<const ClipPair> heldout;        ///< alignment probes; may be empty
    std::vector<std::string> instructions;  ///< used when the stage asks for prompts
    std::size_t probe_pairs = 100;
};

/// Samples of one epoch in training order.
inline std::vector<Sample> epoch_samples(const models::Vocab& vocab, const StageConfig& cfg, const StageData& data,
                                         int epoch) {
    Rng rng(mix_seed(cfg.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    std::vector<Sample> out;
    auto prompt = [&]() -> std::string {
        if (!cfg.use_instructions) {
            return "";
        }
        require(!data.instructions.empty(), "stage needs instructions but none were given");
        return data.instructions[rng.index(data.instructions.size())];
    };
    for (const auto& p : data.train) {
        const int views = static_cast<int>(p.exo.size());
        switch (cfg.stage) {
            case StageId::init: {
                out.push_back({&p, View::ego, 0, models::tokenize_sample(vocab, prompt(), p.text)});
                const int v = static_cast<int>(rng.index(static_cast<std::size_t>(views)));
                out.push_back({&p, View::exo, v, models::tokenize_sample(vocab, prompt(), p.text)});
                break;
            }
            case StageId::s1: {
                const int v = static_cast<int>(rng.index(static_cast<std::size_t>(views)));
                out.push_back({&p, View::exo, v, models::tokenize_sample(vocab, prompt(), p.text)});
                break;
            }
            case StageId::s2:
            case StageId::s3:
                out.push_back({&p, View::ego, 0, models::tokenize_sample(vocab, prompt(), p.text)});
                break;
        }
    }
    rng.shuffle(out);
    return out;
}

template <class T>
Matrix<T> stack_clips(std::span<const ClipPair* const> pairs, View view, std::span<const int> exo_view) {
    require(!pairs.empty(), "stack_clips: no clips");
    const auto& first = view == View::ego ? pairs[0]->ego : pairs[0]->exo.at(exo_view[0]);
    Matrix<T> out(static_cast<Eigen::Index>(pairs.size()) * kClipFrames, first.frames.cols());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& fs = view == View::ego ? pairs[i]->ego : pairs[i]->exo.at(exo_view[i]);
        out.middleRows(static_cast<Eigen::Index>(i) * kClipFrames, kClipFrames) = fs.frames.template cast<T>();
    }
    return out;
}

/// y for a stack of clips: mean over exo views of the exo encoder output.
template <class T>
ag::Var<T> exo_targets(models::Model<T>& m, std::span<const ClipPair* const> pairs, const models::ForwardCtx& ctx = {}) {
    const int views = static_cast<int>(pairs.front()->exo.size());
    std::vector<int> idx(pairs.size());
    ag::Var<T> sum;
    for (int v = 0; v < views; ++v) {
        std::fill(idx.begin(), idx.end(), v);
        ag::Var<T> f = models::encode(m, View::exo, ag::Var<T>(stack_clips<T>(pairs, View::exo, idx)), ctx);
        sum = v == 0 ? f : ag::add(sum, f);
    }
    return ag::scale(sum, static_cast<T>(1.0 / views));
}

/// Frozen-encoder targets computed once per stage.
template <class T>
using ExoCache = std::map<const ClipPair*, Matrix<T>>;

template <class T>
ExoCache<T> build_exo_cache(models::Model<T>& m, std::span<const ClipPair> pairs, std::size_t chunk = 64) {
    ExoCache<T> cache;
    for (std::size_t s = 0; s < pairs.size(); s += chunk) {
        std::vector<const ClipPair*> ptrs;
        for (std::size_t i = s; i < std::min(pairs.size(), s + chunk); ++i) {
            ptrs.push_back(&pairs[i]);
        }
        const Matrix<T> y = exo_targets(m, std::span<const ClipPair* const>(ptrs)).value();
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            cache.emplace(ptrs[i], y.middleRows(static_cast<Eigen::Index>(i) * kClipFrames, kClipFrames));
        }
    }
    return cache;
}

/// Loss of one batch under the stage's active terms.
template <class T>
losses::StageLoss<T> batch_loss(models::Model<T>& m, const StageConfig& cfg, std::span<const Sample> batch,
                                const ExoCache<T>* cache, const models::ForwardCtx& ctx) {
    using V = ag::Var<T>;
    require(!batch.empty(), "batch_loss: empty batch");
    const auto& act = cfg.losses.active;
    const std::size_t n = batch.size();
    std::vector<models::LmInput<T>> lm(n);
    losses::LossParts<T> parts;

    if (cfg.stage == StageId::init || cfg.stage == StageId::s1) {
        for (View view : {View::ego, View::exo}) {
            std::vector<std::size_t> which;
            std::vector<const ClipPair*> ptrs;
            std::vector<int> views;
            for (std::size_t i = 0; i < n; ++i) {
                if (batch[i].view == view) {
                    which.push_back(i);
                    ptrs.push_back(batch[i].pair);
                    views.push_back(batch[i].exo_view);
                }
            }
            if (which.empty()) {
                continue;
            }
            const V feats = models::encode(m, view, V(stack_clips<T>(ptrs, view, views)), ctx);
            for (std::size_t k = 0; k < which.size(); ++k) {
                lm[which[k]].prefix = ag::slice_rows(feats, static_cast<Eigen::Index>(k) * kClipFrames, kClipFrames);
            }
        }
    } else {
        std::vector<const ClipPair*> ptrs;
        for (const auto& s : batch) {
            ptrs.push_back(s.pair);
        }
        const std::vector<int> zeros(n, 0);
        const V x = models::encode(m, View::ego, V(stack_clips<T>(ptrs, View::ego, zeros)), ctx);
        const V y_hat = models::map_apply(m, models::MapDir::F, x, ctx);
        if (act.vtg) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto off = static_cast<Eigen::Index>(i) * kClipFrames;
                lm[i].prefix = models::concat_guidance(ag::slice_rows(x, off, kClipFrames),
                                                       ag::slice_rows(y_hat, off, kClipFrames));
            }
        }
        if (act.ccl_forward || act.ccl_backward || act.kl) {
            V y;
            if (cache != nullptr) {
                Matrix<T> ys(static_cast<Eigen::Index>(n) * kClipFrames, m.cfg.d);
                for (std::size_t i = 0; i < n; ++i) {
                    ys.middleRows(static_cast<Eigen::Index>(i) * kClipFrames, kClipFrames) = cache->at(ptrs[i]);
                }
                y = V(std::move(ys));
            } else {
                y = exo_targets(m, std::span<const ClipPair* const>(ptrs), ctx);
            }
            if (act.ccl_forward || act.ccl_backward) {
                losses::MapFn<T> f = [&](const V& v) { return models::map_apply(m, models::MapDir::F, v, ctx); };
                losses::MapFn<T> g = [&](const V& v) { return models::map_apply(m, models::MapDir::G, v, ctx); };
                const std::vector<V> xs{x};
                const std::vector<V> ys{y};
                const bool fwd_only = !act.ccl_backward;
                auto c = losses::ccl<T>(f, g, xs, ys, fwd_only);
                if (act.ccl_forward) {
                    parts.ccl_forward = c.forward;
                }
                if (act.ccl_backward) {
                    parts.ccl_backward = c.backward;
                }
            }
            if (act.kl) {
                parts.kl = losses::kl_align(y, y_hat, cfg.losses.kl_temperature);
            }
        }
    }

    if (act.vtg) {
        std::vector<int> targets;
        std::vector<unsigned char> mask;
        for (std::size_t i = 0; i < n; ++i) {
            lm[i].tokens = batch[i].tok.tokens;
            targets.insert(targets.end(), batch[i].tok.tokens.begin(), batch[i].tok.tokens.end());
            mask.insert(mask.end(), batch[i].tok.target_mask.begin(), batch[i].tok.target_mask.end());
        }
        const auto out = models::lm_forward<T>(m, lm, ctx);
        parts.vtg = losses::vtg_loss(out.logits, targets, mask);
    }
    return losses::total_stage_loss(cfg.losses, parts);
}

/// Held-out alignment of F against the frozen exo branch.
struct AlignmentProbe {
    std::size_t pairs = 0;
    double cycle_forward = 0.0;   ///< mean |G(F(x)) - x|
    double cycle_backward = 0.0;  ///< mean |F(G(y)) - y|
    double cycle = 0.0;           ///< mean of the two directions
    double kl = 0.0;              ///< KL(y || F(x)) per frame
    double retrieval_top1 = 0.0;  ///< F(x_i) nearest (L1) to y_i among the probe set
};

template <class T>
AlignmentProbe alignment_probe(models::Model<T>& m, std::span<const ClipPair> pairs, std::size_t limit,
                               double kl_temperature = 1.0) {
    using V = ag::Var<T>;
    require(!pairs.empty(), "alignment_probe: no held-out pairs");
    const std::size_t n = std::min(limit, pairs.size());
    std::vector<const ClipPair*> ptrs;
    for (std::size_t i = 0; i < n; ++i) {
        ptrs.push_back(&pairs[i]);
    }
    const std::vector<int> zeros(n, 0);
    const V x = models::encode(m, View::ego, V(stack_clips<T>(ptrs, View::ego, zeros)));
    const V y = exo_targets(m, std::span<const ClipPair* const>(ptrs));
    const V fx = models::map_apply(m, models::MapDir::F, x);
    const V gfx = models::map_apply(m, models::MapDir::G, fx);
    const V fgy = models::map_apply(m, models::MapDir::F, models::map_apply(m, models::MapDir::G, y));

    AlignmentProbe p;
    p.pairs = n;
    p.cycle_forward = static_cast<double>((gfx.value() - x.value()).cwiseAbs().template cast<double>().mean());
    p.cycle_backward = static_cast<double>((fgy.value() - y.value()).cwiseAbs().template cast<double>().mean());
    p.cycle = 0.5 * (p.cycle_forward + p.cycle_backward);
    p.kl = static_cast<double>(losses::kl_align(y, fx, kl_temperature).item());

    const Matrix<double> a = fx.value().template cast<double>();
    const Matrix<double> b = y.value().template cast<double>();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ai = a.middleRows(static_cast<Eigen::Index>(i) * kClipFrames, kClipFrames);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            const double d = (ai - b.middleRows(static_cast<Eigen::Index>(j) * kClipFrames, kClipFrames)).cwiseAbs().sum();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        hits += best == i ? 1 : 0;
    }
    p.retrieval_top1 = static_cast<double>(hits) / static_cast<double>(n);
    return p;
}

inline Json probe_to_json(const AlignmentProbe& p) {
    return {{"pairs", p.pairs},
            {"cycle_forward", p.cycle_forward},
            {"cycle_backward", p.cycle_backward},
            {"cycle", p.cycle},
            {"kl", p.kl},
            {"retrieval_top1", p.retrieval_top1}};
}

struct StepRecord {
    long step = 0;
    int epoch = 0;
    double lr = 0.0;
    double grad_norm = 0.0;
    losses::LossBreakdown loss;
};

struct TrainReport {
    StageId stage = StageId::init;
    long steps = 0;
    std::vector<StepRecord> curve;
    double wall_time_s = 0.0;
    std::string frozen_digest_before;
    std::string frozen_digest_after;
    std::string trainable_digest_before;
    std::string trainable_digest_after;
    std::size_t trainable_scalars = 0;
    std::size_t lora_scalars_added = 0;
    std::optional<AlignmentProbe> probe_start;
    std::optional<AlignmentProbe> probe_end;

    /// Mean total loss over the first and last tenth of the steps (at least
    /// one step each).
    std::pair<double, double> leading_trailing_decile() const {
        require(!curve.empty(), "empty loss curve");
        const std::size_t k = std::max<std::size_t>(1, curve.size() / 10);
        double lead = 0.0, trail = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            lead += curve[i].loss.total;
            trail += curve[curve.size() - 1 - i].loss.total;
        }
        return {lead / static_cast<double>(k), trail / static_cast<double>(k)};
    }
};

inline Json step_to_json(StageId stage, const StepRecord& r) {
    return {{"stage", to_string(stage)}, {"step", r.step},           {"epoch", r.epoch},
            {"lr", r.lr},                {"grad_norm", r.grad_norm}, {"loss", losses::breakdown_to_json(r.loss)}};
}

inline Json train_report_to_json(const TrainReport& r) {
    Json j = {{"stage", to_string(r.stage)},
              {"steps", r.steps},
              {"wall_time_s", r.wall_time_s},
              {"frozen_digest_before", r.frozen_digest_before},
              {"frozen_digest_after", r.frozen_digest_after},
              {"trainable_digest_before", r.trainable_digest_before},
              {"trainable_digest_after", r.trainable_digest_after},
              {"trainable_scalars", r.trainable_scalars},
              {"lora_scalars_added", r.lora_scalars_added}};
    if (!r.curve.empty()) {
        const auto [lead, trail] = r.leading_trailing_decile();
        j["loss_leading_decile"] = lead;
        j["loss_trailing_decile"] = trail;
        j["final_loss"] = losses::breakdown_to_json(r.curve.back().loss);
    }
    if (r.probe_start) {
        j["probe_start"] = probe_to_json(*r.probe_start);
    }
    if (r.probe_end) {
        j["probe_end"] = probe_to_json(*r.probe_end);
    }
    return j;
}

/// One full stage. Frozen parameters are checked bit-identical afterwards;
/// a non-finite loss aborts before any parameter is touched by that step.
template <class T>
TrainReport run_stage(TrainState<T>& st, const StageConfig& cfg, const StageData& data, std::ostream* log = nullptr) {
    validate(cfg);
    require(!data.train.empty(), fmt::format("stage {} has no training pairs", to_string(cfg.stage)));
    const auto t0 = std::chrono::steady_clock::now();
    auto& m = st.model;
    TrainReport rep;
    rep.stage = cfg.stage;

    if (cfg.use_lora && !m.lora) {
        rep.lora_scalars_added = models::lora_wrap(m, st.lora_plan);
    }
    const auto names = m.params.names();
    check_partition(cfg, names);
    m.params.set_trainable(cfg.trainable);
    const auto frozen = m.params.match(cfg.frozen);
    const auto trainable = m.params.match(cfg.trainable);
    rep.frozen_digest_before = m.params.digest(frozen);
    rep.trainable_digest_before = m.params.digest(trainable);
    for (const auto& n : trainable) {
        rep.trainable_scalars += static_cast<std::size_t>(m.params.at(n).value().size());
    }

    const bool probe = !data.heldout.empty();
    if (probe) {
        rep.probe_start = alignment_probe(m, data.heldout, data.probe_pairs, cfg.losses.kl_temperature);
    }

    const bool exo_frozen = models::matches_any(cfg.frozen, "enc_exo.proj.w");
    std::optional<ExoCache<T>> cache;
    if (cfg.stage == StageId::s2 && exo_frozen) {
        cache = build_exo_cache(m, data.train);
    }

    st.opt = OptimizerState<T>{};
    st.opt.hyper = {cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps};
    const auto first = epoch_samples(m.vocab, cfg, data, 0);
    const long per_epoch = static_cast<long>((first.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                             static_cast<std::size_t>(cfg.batch_size));
    const long total = per_epoch * cfg.epochs;
    Rng drop_rng(mix_seed(cfg.seed, 0xd509));
    models::ForwardCtx ctx{true, &drop_rng};

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto samples = epoch == 0 ? first : epoch_samples(m.vocab, cfg, data, epoch);
        for (std::size_t s = 0; s < samples.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(samples.size(), s + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const Sample> batch(samples.data() + s, e - s);
            m.params.zero_grad();
            auto loss = batch_loss<T>(m, cfg, batch, cache ? &*cache : nullptr, ctx);
            require(std::isfinite(loss.breakdown.total),
                    fmt::format("loss diverged at stage {} step {} (total = {})", to_string(cfg.stage), step,
                                loss.breakdown.total));
            if (loss.total.requires_grad()) {
                ag::backward(loss.total);
            }
            StepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = lr_at(step, total, cfg);
            rec.grad_norm = clip_grad_norm(m.params, cfg.grad_clip);
            rec.loss = loss.breakdown;
            opt_step(m.params, st.opt, rec.lr);
            if (log != nullptr) {
                *log << step_to_json(cfg.stage, rec).dump() << '\n';
            }
            rep.curve.push_back(rec);
            ++step;
        }
    }
    m.params.zero_grad();
    m.params.set_trainable({});
    rep.steps = step;
    st.global_step += step;

    rep.frozen_digest_after = m.params.digest(frozen);
    rep.trainable_digest_after = m.params.digest(trainable);
    ensure(rep.frozen_digest_before == rep.frozen_digest_after,
           fmt::format("frozen parameters changed during stage {}", to_string(cfg.stage)));
    if (probe) {
        rep.probe_end = alignment_probe(m, data.heldout, data.probe_pairs, cfg.losses.kl_temperature);
    }
    st.lineage.push_back(to_string(cfg.stage));
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

struct LmWarmupReport {
    long steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    double wall_time_s = 0.0;
};

/// Text-only next-token training of the base LM on the caption corpus, with
/// an empty visual prefix. Stands in for a pretrained language model; only
/// lm.* moves.
template <class T>
LmWarmupReport warm_start_lm(TrainState<T>& st, const std::vector<std::string>& texts, int epochs, int batch,
                             double lr, std::uint64_t seed) {
    require(!texts.empty(), "LM warm start needs at least one text");
    require(epochs >= 0 && batch >= 1 && lr > 0.0, "LM warm start: bad schedule");
    const auto t0 = std::chrono::steady_clock::now();
    auto& m = st.model;
    LmWarmupReport rep;
    const std::vector<std::string> lm_only = {"lm.*"};
    m.params.set_trainable(lm_only);
    const auto others = m.params.names();
    std::vector<std::string> rest;
    for (const auto& n : others) {
        if (!models::matches_any(lm_only, n)) {
            rest.push_back(n);
        }
    }
    const std::string before = m.params.digest(rest);

    std::vector<models::TokenizedSample> toks;
    for (const auto& t : texts) {
        toks.push_back(models::tokenize_sample(m.vocab, "", t));
    }
    OptimizerState<T> opt;
    const auto bs = static_cast<std::size_t>(batch);
    const long per_epoch = static_cast<long>((toks.size() + bs - 1) / bs);
    const long total = per_epoch * epochs;
    StageConfig sched;
    sched.lr = lr;
    Rng rng(mix_seed(seed, 0x1a0a));
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(toks);
        for (std::size_t s = 0; s < toks.size(); s += bs) {
            m.params.zero_grad();
            std::vector<models::LmInput<T>> in;
            std::vector<int> targets;
            std::vector<unsigned char> mask;
            for (std::size_t i = s; i < std::min(toks.size(), s + bs); ++i) {
                in.push_back({ag::Var<T>(Matrix<T>(0, m.cfg.d)), toks[i].tokens});
                targets.insert(targets.end(), toks[i].tokens.begin(), toks[i].tokens.end());
                mask.insert(mask.end(), toks[i].target_mask.begin(), toks[i].target_mask.end());
            }
            const auto out = models::lm_forward<T>(m, in);
            const auto loss = losses::vtg_loss(out.logits, targets, mask);
            const double value = static_cast<double>(loss.item());
            require(std::isfinite(value), fmt::format("LM warm start diverged at step {}", rep.steps));
            ag::backward(loss);
            clip_grad_norm(m.params, 1.0);
            opt_step(m.params, opt, lr_at(rep.steps, total, sched));
            if (rep.steps == 0) {
                rep.first_loss = value;
            }
            rep.last_loss = value;
            ++rep.steps;
        }
    }
    m.params.zero_grad();
    m.params.set_trainable({});
    ensure(before == m.params.digest(rest), "LM warm start touched a non-LM parameter");
    st.lm_warm_started = true;
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline Json lm_warmup_to_json(const LmWarmupReport& r) {
    return {{"steps", r.steps}, {"first_loss", r.first_loss}, {"last_loss", r.last_loss}, {"wall_time_s", r.wall_time_s}};
}

}  // namespace exo2ego::trainer
