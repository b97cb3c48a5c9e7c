// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Training objectives.
//
//   vtg   mean next-token cross-entropy over supervised rows
//   ccl   forward  E_x |G(F(x)) - x|,  backward  E_y |F(G(y)) - y|, where
//         |.| is the mean absolute entry of one (T x d) block and E the
//         batch mean
//   kl    mean over frames of KL(softmax(y / tau) || softmax(y_hat / tau)),
//         softmax over the feature dimension

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/tensor/autograd.hpp"

namespace exo2ego::losses {

template <class T>
using Var = ag::Var<T>;

/// logits: n x |V|; row k is scored against targets[k] when mask[k] != 0.
template <class T>
Var<T> vtg_loss(const Var<T>& logits, const std::vector<int>& targets, const std::vector<unsigned char>& mask) {
    require(static_cast<std::size_t>(logits.rows()) == targets.size() && targets.size() == mask.size(),
            fmt::format("vtg_loss: {} logit rows, {} targets, {} mask entries", logits.rows(), targets.size(),
                        mask.size()));
    std::size_t count = 0;
    Matrix<T> weights(logits.rows(), 1);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        require(targets[k] >= 0 && targets[k] < logits.cols(), fmt::format("vtg_loss: target {} out of range", targets[k]));
        weights(static_cast<Eigen::Index>(k), 0) = mask[k] ? T(1) : T(0);
        count += mask[k] ? 1 : 0;
    }
    require(count > 0, "no supervised positions");
    const Var<T> picked = ag::take_along_rows(ag::log_softmax_rows(logits), targets);
    return ag::scale(ag::sum_all(ag::mul_const(picked, weights)), static_cast<T>(-1.0 / static_cast<double>(count)));
}

template <class T>
using MapFn = std::function<Var<T>(const Var<T>&)>;

template <class T>
struct CclTerms {
    Var<T> forward;
    Var<T> backward;  ///< exact zero when forward_only
};

namespace detail {

template <class T>
Var<T> cycle_term(const MapFn<T>& there, const MapFn<T>& back, std::span<const Var<T>> batch) {
    std::vector<Var<T>> per_sample;
    per_sample.reserve(batch.size());
    for (const auto& x : batch) {
        per_sample.push_back(ag::mean_all(ag::abs(ag::sub(back(there(x)), x))));
    }
    return ag::mean_of<T>(per_sample);
}

}  // namespace detail

/// Each batch entry is one sample's (T x d) block. Stacking equally shaped
/// samples into one block gives the same value.
template <class T>
CclTerms<T> ccl(const MapFn<T>& f, const MapFn<T>& g, std::span<const Var<T>> x_batch, std::span<const Var<T>> y_batch,
                bool forward_only = false) {
    require(!x_batch.empty(), "ccl: empty ego batch");
    CclTerms<T> out;
    out.forward = detail::cycle_term(f, g, x_batch);
    if (forward_only) {
        out.backward = Var<T>::scalar(T(0));
    } else {
        require(!y_batch.empty(), "ccl: empty exo batch");
        out.backward = detail::cycle_term(g, f, y_batch);
    }
    return out;
}

template <class T>
void require_finite(const Var<T>& v, const char* what) {
    require(v.value().allFinite(), fmt::format("{}: non-finite input", what));
}

/// y, y_hat: rows are frames (any number of samples stacked).
template <class T>
Var<T> kl_align(const Var<T>& y, const Var<T>& y_hat, double temperature = 1.0) {
    require(temperature > 0.0, "kl_align: temperature must be positive");
    require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(),
            fmt::format("kl_align: shapes {}x{} and {}x{} differ", y.rows(), y.cols(), y_hat.rows(), y_hat.cols()));
    require(y.rows() > 0, "kl_align: empty batch");
    require_finite(y, "kl_align");
    require_finite(y_hat, "kl_align");
    const T inv_t = static_cast<T>(1.0 / temperature);
    const Var<T> log_p = ag::log_softmax_rows(ag::scale(y, inv_t));
    const Var<T> log_q = ag::log_softmax_rows(ag::scale(y_hat, inv_t));
    const Var<T> p = ag::softmax_rows(ag::scale(y, inv_t));
    const Var<T> per_entry = ag::mul(p, ag::sub(log_p, log_q));
    return ag::scale(ag::sum_all(per_entry), static_cast<T>(1.0 / static_cast<double>(y.rows())));
}

struct LossWeights {
    double vtg = 1.0;
    double ccl = 1.0;
    double kl = 1.0;

    bool operator==(const LossWeights&) const = default;
};

struct ActiveLosses {
    bool vtg = true;
    bool ccl_forward = false;
    bool ccl_backward = false;
    bool kl = false;

    bool operator==(const ActiveLosses&) const = default;
};

struct LossSpec {
    ActiveLosses active;
    LossWeights weights;
    double kl_temperature = 1.0;

    bool operator==(const LossSpec&) const = default;
};

struct LossBreakdown {
    double vtg = 0.0;
    double ccl_forward = 0.0;
    double ccl_backward = 0.0;
    double kl = 0.0;
    double total = 0.0;
    LossWeights weights;  ///< effective weights; 0 for inactive terms
    double ccl_forward_weight = 0.0;
    double ccl_backward_weight = 0.0;
};

template <class T>
struct LossParts {
    std::optional<Var<T>> vtg;
    std::optional<Var<T>> ccl_forward;
    std::optional<Var<T>> ccl_backward;
    std::optional<Var<T>> kl;
};

template <class T>
struct StageLoss {
    Var<T> total;
    LossBreakdown breakdown;
};

/// total = w_vtg vtg + w_ccl (ccl_f + ccl_b) + w_kl kl over active terms.
template <class T>
StageLoss<T> total_stage_loss(const LossSpec& spec, const LossParts<T>& parts) {
    const auto& a = spec.active;
    auto need = [](bool active, const std::optional<Var<T>>& v, const char* name) {
        require(!active || v.has_value(), fmt::format("active loss '{}' has no input", name));
    };
    need(a.vtg, parts.vtg, "vtg");
    need(a.ccl_forward, parts.ccl_forward, "ccl_forward");
    need(a.ccl_backward, parts.ccl_backward, "ccl_backward");
    need(a.kl, parts.kl, "kl");

    StageLoss<T> out;
    auto& b = out.breakdown;
    b.weights.vtg = a.vtg ? spec.weights.vtg : 0.0;
    b.weights.ccl = a.ccl_forward || a.ccl_backward ? spec.weights.ccl : 0.0;
    b.weights.kl = a.kl ? spec.weights.kl : 0.0;
    b.ccl_forward_weight = a.ccl_forward ? spec.weights.ccl : 0.0;
    b.ccl_backward_weight = a.ccl_backward ? spec.weights.ccl : 0.0;

    std::vector<Var<T>> terms;
    auto take = [&](bool active, const std::optional<Var<T>>& v, double w, double& slot) {
        if (!active) {
            return;
        }
        slot = static_cast<double>(v->item());
        if (w != 0.0) {
            terms.push_back(ag::scale(*v, static_cast<T>(w)));
        }
    };
    take(a.vtg, parts.vtg, b.weights.vtg, b.vtg);
    take(a.ccl_forward, parts.ccl_forward, b.weights.ccl, b.ccl_forward);
    take(a.ccl_backward, parts.ccl_backward, b.weights.ccl, b.ccl_backward);
    take(a.kl, parts.kl, b.weights.kl, b.kl);

    if (terms.empty()) {
        out.total = Var<T>::scalar(T(0));
    } else {
        out.total = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) {
            out.total = ag::add(out.total, terms[i]);
        }
    }
    b.total = static_cast<double>(out.total.item());
    return out;
}

inline Json breakdown_to_json(const LossBreakdown& b) {
    return {{"vtg", b.vtg},
            {"ccl_forward", b.ccl_forward},
            {"ccl_backward", b.ccl_backward},
            {"kl", b.kl},
            {"total", b.total},
            {"weights",
             {{"vtg", b.weights.vtg},
              {"ccl", b.weights.ccl},
              {"ccl_forward", b.ccl_forward_weight},
              {"ccl_backward", b.ccl_backward_weight},
              {"kl", b.weights.kl}}}};
}

}  // namespace exo2ego::losses
