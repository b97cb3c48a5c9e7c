// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The parameterised pipeline: two visual encoders, the F (ego -> exo) and
// G (exo -> ego) mapping nets and a small causal LM that reads a visual
// prefix. Parameter names:
//
//   enc_ego.*, enc_exo.*   proj, block<i>.fc1/fc2, out, then a per-frame
//                          standardisation without parameters
//   map_f.*, map_g.*       down, block<i>.fc1/fc2, up   (residual)
//                          fc1, fc2                     (fc ablation)
//   lm.*                   tok_emb, pos_emb, block<i>.{ln1,attn.wq/wk/wv/wo,
//                          ln2,mlp.fc1/fc2}, ln_f
//   lora.<weight>.A/B      adapters, present only after lora_wrap
//
// Dense layers are "<name>.w" (out x in) and "<name>.b" (1 x out). Every
// forward works on stacked rows: a batch of B clips of 16 frames is one
// (16B) x width matrix.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/rng.hpp"
#include "exo2ego/models/config.hpp"
#include "exo2ego/models/params.hpp"
#include "exo2ego/models/vocab.hpp"
#include "exo2ego/synthworld/clips.hpp"
#include "exo2ego/tensor/autograd.hpp"

namespace exo2ego::models {

using synth::View;

struct ForwardCtx {
    bool training = false;
    Rng* rng = nullptr;
};

template <class T>
struct Model {
    using Var = ag::Var<T>;

    ModelConfig cfg;
    Vocab vocab;
    ParamStore<T> params;
    std::optional<LoRAConfig> lora;
};

namespace detail {

template <class T>
Matrix<T> normal_matrix(std::uint64_t seed, const std::string& name, Eigen::Index r, Eigen::Index c, double std) {
    Rng rng(mix_seed(seed, fnv1a(name)));
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(std * rng.normal());
    }
    return m;
}

template <class T>
void add_dense(Model<T>& m, const std::string& name, int in, int out, double gain = 1.0) {
    m.params.add(name + ".w", normal_matrix<T>(m.cfg.seed, name + ".w", out, in, gain / std::sqrt(double(in))));
    m.params.add(name + ".b", Matrix<T>::Zero(1, out));
}

template <class T>
void add_norm(Model<T>& m, const std::string& name, int d) {
    m.params.add(name + ".g", Matrix<T>::Ones(1, d));
    m.params.add(name + ".b", Matrix<T>::Zero(1, d));
}

template <class T>
void add_encoder(Model<T>& m, const std::string& prefix, int in) {
    const int d = m.cfg.d;
    add_dense(m, prefix + ".proj", in, d);
    for (int i = 0; i < m.cfg.enc_blocks; ++i) {
        add_dense(m, fmt::format("{}.block{}.fc1", prefix, i), d, d);
        add_dense(m, fmt::format("{}.block{}.fc2", prefix, i), d, d, 0.5);
    }
    add_dense(m, prefix + ".out", d, d);
}

template <class T>
void add_mapping(Model<T>& m, const std::string& prefix) {
    const int d = m.cfg.d;
    if (m.cfg.mapping == MappingKind::fc) {
        add_dense(m, prefix + ".fc1", d, d);
        add_dense(m, prefix + ".fc2", d, d);
        return;
    }
    const int h = m.cfg.hidden();
    add_dense(m, prefix + ".down", d, h);
    for (int i = 0; i < m.cfg.map_blocks; ++i) {
        add_dense(m, fmt::format("{}.block{}.fc1", prefix, i), h, h);
        add_dense(m, fmt::format("{}.block{}.fc2", prefix, i), h, h, 0.25);
    }
    add_dense(m, prefix + ".up", h, d);
}

template <class T>
void add_lm(Model<T>& m) {
    const auto& c = m.cfg;
    const int d = c.d;
    const int v = static_cast<int>(c.vocab.size());
    m.params.add("lm.tok_emb", normal_matrix<T>(c.seed, "lm.tok_emb", v, d, c.lm_embed_std));
    m.params.add("lm.pos_emb", normal_matrix<T>(c.seed, "lm.pos_emb", c.lm_max_len, d, c.lm_embed_std));
    for (int i = 0; i < c.lm_blocks; ++i) {
        const std::string b = fmt::format("lm.block{}", i);
        add_norm(m, b + ".ln1", d);
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            add_dense(m, fmt::format("{}.attn.{}", b, w), d, d);
        }
        add_norm(m, b + ".ln2", d);
        add_dense(m, b + ".mlp.fc1", d, c.lm_mlp_mult * d);
        add_dense(m, b + ".mlp.fc2", c.lm_mlp_mult * d, d);
    }
    add_norm(m, "lm.ln_f", d);
}

}  // namespace detail

/// Fresh model; parameter values depend only on (cfg.seed, name).
template <class T>
Model<T> init_model(const ModelConfig& cfg) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    m.vocab = Vocab::from_words(cfg.vocab);
    detail::add_encoder(m, "enc_ego", cfg.ego_in);
    detail::add_encoder(m, "enc_exo", cfg.exo_in);
    detail::add_mapping(m, "map_f");
    detail::add_mapping(m, "map_g");
    detail::add_lm(m);
    return m;
}

/// x W^T + b, plus scale * dropout(x) A^T B^T when an adapter is attached.
template <class T>
ag::Var<T> dense(Model<T>& m, const std::string& name, const ag::Var<T>& x, const ForwardCtx& ctx) {
    const std::string w = name + ".w";
    ag::Var<T> y = ag::linear(x, m.params.at(w), m.params.at(name + ".b"));
    if (m.lora && m.params.contains("lora." + w + ".A")) {
        const auto& a = m.params.at("lora." + w + ".A");
        const auto& b = m.params.at("lora." + w + ".B");
        ag::Var<T> xin = x;
        if (ctx.training && m.lora->dropout > 0.0) {
            ensure(ctx.rng != nullptr, "LoRA dropout needs an rng");
            xin = ag::dropout(x, m.lora->dropout, *ctx.rng, true);
        }
        y = ag::add(y, ag::scale(ag::matmul_nt(ag::matmul_nt(xin, a), b), static_cast<T>(m.lora->scale())));
    }
    return y;
}

template <class T>
ag::Var<T> layer_norm(Model<T>& m, const std::string& name, const ag::Var<T>& x) {
    return ag::layer_norm_rows(x, m.params.at(name + ".g"), m.params.at(name + ".b"));
}

inline const char* encoder_prefix(View v) { return v == View::ego ? "enc_ego" : "enc_exo"; }

/// Zero mean, unit variance per row; no learnable gain or bias.
template <class T>
ag::Var<T> standardize_rows(const ag::Var<T>& x) {
    const ag::Var<T> ones(Matrix<T>::Ones(1, x.cols()));
    const ag::Var<T> zeros(Matrix<T>::Zero(1, x.cols()));
    return ag::layer_norm_rows(x, ones, zeros);
}

/// Stacked frames (rows x frame width) -> features (rows x d).
template <class T>
ag::Var<T> encode(Model<T>& m, View view, const ag::Var<T>& frames, const ForwardCtx& ctx = {}) {
    const std::string p = encoder_prefix(view);
    const int in = view == View::ego ? m.cfg.ego_in : m.cfg.exo_in;
    require(frames.cols() == in, fmt::format("{} encoder expects width {}, got {}", p, in, frames.cols()));
    ag::Var<T> h = ag::gelu(dense(m, p + ".proj", frames, ctx));
    for (int i = 0; i < m.cfg.enc_blocks; ++i) {
        const std::string b = fmt::format("{}.block{}", p, i);
        h = ag::add(h, dense(m, b + ".fc2", ag::gelu(dense(m, b + ".fc1", h, ctx)), ctx));
    }
    return standardize_rows(dense(m, p + ".out", h, ctx));
}

/// One clip; its view must match the encoder.
template <class T>
ag::Var<T> encode(Model<T>& m, View view, const synth::FrameSeq& clip, const ForwardCtx& ctx = {}) {
    require(clip.view == view, "view mismatch");
    return encode(m, view, ag::Var<T>(clip.frames.template cast<T>()), ctx);
}

enum class MapDir { F, G };

inline const char* mapping_prefix(MapDir d) { return d == MapDir::F ? "map_f" : "map_g"; }

/// F: ego -> exo, G: exo -> ego. Shape preserving.
template <class T>
ag::Var<T> map_apply(Model<T>& m, MapDir dir, const ag::Var<T>& x, const ForwardCtx& ctx = {}) {
    require(x.cols() == m.cfg.d, fmt::format("mapping expects width {}, got {}", m.cfg.d, x.cols()));
    const std::string p = mapping_prefix(dir);
    if (m.cfg.mapping == MappingKind::fc) {
        return dense(m, p + ".fc2", ag::gelu(dense(m, p + ".fc1", x, ctx)), ctx);
    }
    ag::Var<T> h = dense(m, p + ".down", x, ctx);
    for (int i = 0; i < m.cfg.map_blocks; ++i) {
        const std::string b = fmt::format("{}.block{}", p, i);
        h = ag::add(h, dense(m, b + ".fc2", ag::gelu(dense(m, b + ".fc1", h, ctx)), ctx));
    }
    return dense(m, p + ".up", h, ctx);
}

/// [mapped; ego]: the demonstrator's view first.
template <class T>
ag::Var<T> concat_guidance(const ag::Var<T>& ego_feats, const ag::Var<T>& mapped_feats) {
    require(ego_feats.cols() == mapped_feats.cols(),
            fmt::format("concat_guidance: feature widths differ ({} vs {})", ego_feats.cols(), mapped_feats.cols()));
    return ag::concat_rows(mapped_feats, ego_feats);
}

template <class T>
struct LmInput {
    ag::Var<T> prefix;  ///< P x d visual rows, may be 0 x d
    std::vector<int> tokens;
};

/// Row k of sample s (at offsets[s] + k) holds the logits for tokens[k].
template <class T>
struct LmOutput {
    ag::Var<T> logits;
    std::vector<Eigen::Index> offsets;
    std::vector<Eigen::Index> counts;
};

namespace detail {

template <class T>
const Matrix<T>& causal_mask(std::map<Eigen::Index, Matrix<T>>& cache, Eigen::Index n) {
    auto it = cache.find(n);
    if (it == cache.end()) {
        Matrix<T> mask = Matrix<T>::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                mask(i, j) = -std::numeric_limits<T>::infinity();
            }
        }
        it = cache.emplace(n, std::move(mask)).first;
    }
    return it->second;
}

}  // namespace detail

/// Batched causal LM. Each sample's sequence is its prefix rows, then <bos>
/// and tokens[0..n-2]; the last max(n, 1) positions are read out, so an
/// empty token list yields the single prediction after <bos>.
template <class T>
LmOutput<T> lm_forward(Model<T>& m, std::span<const LmInput<T>> batch, const ForwardCtx& ctx = {}) {
    using V = ag::Var<T>;
    require(!batch.empty(), "lm_forward: empty batch");
    const int d = m.cfg.d;
    const int vsize = m.vocab.size();
    const auto& tok_emb = m.params.at("lm.tok_emb");
    const auto& pos_emb = m.params.at("lm.pos_emb");

    std::vector<V> rows;
    std::vector<Eigen::Index> starts, lengths;
    std::vector<int> readout;
    Eigen::Index total = 0;
    LmOutput<T> out;
    for (const auto& s : batch) {
        require(s.prefix.cols() == d, fmt::format("prefix width {} does not match d = {}", s.prefix.cols(), d));
        std::vector<int> ids{Vocab::kBos};
        for (std::size_t k = 0; k < s.tokens.size(); ++k) {
            require(s.tokens[k] >= 0 && s.tokens[k] < vsize,
                    fmt::format("token id {} out of vocabulary (size {})", s.tokens[k], vsize));
            if (k + 1 < s.tokens.size()) {
                ids.push_back(s.tokens[k]);
            }
        }
        const Eigen::Index p = s.prefix.rows();
        const Eigen::Index len = p + static_cast<Eigen::Index>(ids.size());
        require(len <= m.cfg.lm_max_len, fmt::format("sequence length {} exceeds lm_max_len {}", len, m.cfg.lm_max_len));
        std::vector<int> pos(static_cast<std::size_t>(len));
        for (Eigen::Index i = 0; i < len; ++i) {
            pos[static_cast<std::size_t>(i)] = static_cast<int>(i);
        }
        const V tok = ag::gather_rows(tok_emb, ids);
        const V seq = p > 0 ? ag::concat_rows(s.prefix, tok) : tok;
        rows.push_back(ag::add(seq, ag::gather_rows(pos_emb, std::move(pos))));
        starts.push_back(total);
        lengths.push_back(len);
        out.offsets.push_back(static_cast<Eigen::Index>(readout.size()));
        out.counts.push_back(static_cast<Eigen::Index>(ids.size()));
        for (Eigen::Index i = p; i < len; ++i) {
            readout.push_back(static_cast<int>(total + i));
        }
        total += len;
    }
    V h = rows.size() == 1 ? rows.front() : ag::concat_rows<T>(rows);

    const int heads = m.cfg.lm_heads;
    const int dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::map<Eigen::Index, Matrix<T>> masks;
    for (int bi = 0; bi < m.cfg.lm_blocks; ++bi) {
        const std::string b = fmt::format("lm.block{}", bi);
        const V a = layer_norm(m, b + ".ln1", h);
        const V q = dense(m, b + ".attn.wq", a, ctx);
        const V k = dense(m, b + ".attn.wk", a, ctx);
        const V v = dense(m, b + ".attn.wv", a, ctx);
        std::vector<V> per_sample;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const V qs = ag::slice_rows(q, starts[s], lengths[s]);
            const V ks = ag::slice_rows(k, starts[s], lengths[s]);
            const V vs = ag::slice_rows(v, starts[s], lengths[s]);
            const Matrix<T>& mask = detail::causal_mask(masks, lengths[s]);
            std::vector<V> per_head;
            for (int hd = 0; hd < heads; ++hd) {
                const V qh = heads == 1 ? qs : ag::slice_cols(qs, hd * dh, dh);
                const V kh = heads == 1 ? ks : ag::slice_cols(ks, hd * dh, dh);
                const V vh = heads == 1 ? vs : ag::slice_cols(vs, hd * dh, dh);
                const V scores = ag::add_const(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt), mask);
                per_head.push_back(ag::matmul(ag::softmax_rows(scores), vh));
            }
            per_sample.push_back(heads == 1 ? per_head.front() : ag::concat_cols<T>(per_head));
        }
        const V attn = per_sample.size() == 1 ? per_sample.front() : ag::concat_rows<T>(per_sample);
        h = ag::add(h, dense(m, b + ".attn.wo", attn, ctx));
        const V mm = layer_norm(m, b + ".ln2", h);
        h = ag::add(h, dense(m, b + ".mlp.fc2", ag::gelu(dense(m, b + ".mlp.fc1", mm, ctx)), ctx));
    }
    const V hf = layer_norm(m, "lm.ln_f", ag::gather_rows(h, std::move(readout)));
    out.logits = ag::matmul_nt(hf, tok_emb);
    return out;
}

/// Single-sample form: (max(len(tokens), 1)) x |V| logits.
template <class T>
ag::Var<T> lm_logits(Model<T>& m, const ag::Var<T>& prefix, const std::vector<int>& tokens, const ForwardCtx& ctx = {}) {
    const LmInput<T> in{prefix, tokens};
    return lm_forward<T>(m, std::span<const LmInput<T>>(&in, 1), ctx).logits;
}

}  // namespace exo2ego::models
