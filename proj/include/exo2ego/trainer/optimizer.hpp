// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// AdamW with decoupled weight decay:
//
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)

#include <cmath>
#include <map>
#include <string>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/models/params.hpp"

namespace exo2ego::trainer {

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.02;
    double eps = 1e-8;
};

template <class T>
struct Moments {
    Matrix<T> m;
    Matrix<T> v;
};

template <class T>
struct OptimizerState {
    AdamWHyper hyper;
    long step = 0;
    std::map<std::string, Moments<T>> moments;  ///< trainable parameters only
};

/// Global L2 norm over the gradients of trainable parameters.
template <class T>
double grad_norm(const models::ParamStore<T>& params) {
    double sq = 0.0;
    for (const auto& [name, v] : params) {
        if (v.requires_grad() && v.has_grad()) {
            sq += v.grad().template cast<double>().squaredNorm();
        }
    }
    return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping. max_norm = 0 leaves gradients alone.
template <class T>
double clip_grad_norm(models::ParamStore<T>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const T s = static_cast<T>(max_norm / (norm + 1e-12));
        for (auto& [name, v] : params) {
            if (v.requires_grad() && v.has_grad()) {
                v.mutable_grad() *= s;
            }
        }
    }
    return norm;
}

/// One update of every trainable parameter. Frozen parameters are never
/// read or written, whatever gradient they carry. A trainable parameter
/// without a gradient is treated as having a zero gradient.
template <class T>
void opt_step(models::ParamStore<T>& params, OptimizerState<T>& state, double lr) {
    for (const auto& [name, v] : params) {
        if (v.requires_grad() && v.has_grad()) {
            require(v.grad().allFinite(), fmt::format("non-finite gradient in parameter '{}'", name));
        }
    }
    state.step += 1;
    const auto& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (auto& [name, v] : params) {
        if (!v.requires_grad()) {
            continue;
        }
        auto& w = v.mutable_value();
        auto it = state.moments.find(name);
        if (it == state.moments.end()) {
            it = state.moments.emplace(name, Moments<T>{Matrix<T>::Zero(w.rows(), w.cols()),
                                                         Matrix<T>::Zero(w.rows(), w.cols())}).first;
        }
        auto& [m, s] = it->second;
        if (v.has_grad()) {
            const auto& g = v.grad();
            m = static_cast<T>(h.beta1) * m + static_cast<T>(1.0 - h.beta1) * g;
            s = static_cast<T>(h.beta2) * s + static_cast<T>(1.0 - h.beta2) * g.cwiseProduct(g);
        } else {
            m *= static_cast<T>(h.beta1);
            s *= static_cast<T>(h.beta2);
        }
        const T a = static_cast<T>(lr);
        const T wd = static_cast<T>(h.weight_decay);
        const T inv_bc1 = static_cast<T>(1.0 / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(h.eps);
        w.array() -= a * ((m.array() * inv_bc1) / ((s.array() * inv_bc2).sqrt() + eps) + wd * w.array());
    }
}

}  // namespace exo2ego::trainer
