// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Tape-free reverse-mode autodiff over dense row-major matrices.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure only when some input requires a gradient, so inference
// and frozen sub-graphs build no tape. backward() walks the DAG in reverse
// topological order and accumulates into each node's grad.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/matrix.hpp"
#include "exo2ego/common/rng.hpp"

namespace exo2ego::ag {

template <class T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    template <class Expr>
    void accumulate(const Expr& g) {
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var scalar(T v) {
        Matrix<T> m(1, 1);
        m(0, 0) = v;
        return Var(std::move(m));
    }

    bool defined() const { return node_ != nullptr; }
    const Matrix<T>& value() const { return node_->value; }
    /// Direct access for optimizers and finite-difference probes on leaves.
    Matrix<T>& mutable_value() { return node_->value; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    T item() const { return node_->value(0, 0); }

    bool has_grad() const { return node_->grad.size() != 0; }
    const Matrix<T>& grad() const { return node_->grad; }
    Matrix<T> grad_or_zero() const {
        return has_grad() ? node_->grad : Matrix<T>::Zero(rows(), cols());
    }
    Matrix<T>& mutable_grad() { return node_->grad; }
    void zero_grad() { node_->grad.resize(0, 0); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T, class Fn>
Var<T> make_op(Matrix<T> value, std::initializer_list<const Var<T>*> inputs, Fn&& backward) {
    Var<T> out(std::move(value));
    bool any = false;
    for (const Var<T>* v : inputs) {
        any = any || v->requires_grad();
    }
    if (any) {
        auto& node = *out.node();
        node.requires_grad = true;
        for (const Var<T>* v : inputs) {
            node.inputs.push_back(v->node());
        }
        node.backward = std::forward<Fn>(backward);
    }
    return out;
}

template <class T, class Fn>
Var<T> make_op_n(Matrix<T> value, std::span<const Var<T>> inputs, Fn&& backward) {
    Var<T> out(std::move(value));
    bool any = false;
    for (const Var<T>& v : inputs) {
        any = any || v.requires_grad();
    }
    if (any) {
        auto& node = *out.node();
        node.requires_grad = true;
        for (const Var<T>& v : inputs) {
            node.inputs.push_back(v.node());
        }
        node.backward = std::forward<Fn>(backward);
    }
    return out;
}

inline void check_shape(bool ok, const char* op) {
    if (!ok) {
        throw Error(std::string("shape mismatch in ") + op);
    }
}

}  // namespace detail

/// Accumulates d(root)/d(node) into every node that requires a gradient.
/// root must be 1x1.
template <class T>
void backward(const Var<T>& root) {
    ensure(root.rows() == 1 && root.cols() == 1, "backward() needs a scalar root");
    if (!root.requires_grad()) {
        return;
    }
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix<T>::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward && n.grad.size() != 0) {
            n.backward(n);
            if (!n.inputs.empty()) {
                // Interior grads are dead after propagation.
                n.grad.resize(0, 0);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    return detail::make_op<T>(a.value() + b.value(), {&a, &b}, [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (in->requires_grad) {
                in->accumulate(self.grad);
            }
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    return detail::make_op<T>(a.value() - b.value(), {&a, &b}, [](Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            self.inputs[0]->accumulate(self.grad);
        }
        if (self.inputs[1]->requires_grad) {
            self.inputs[1]->accumulate(-self.grad);
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
    return detail::make_op<T>(a.value().cwiseProduct(b.value()), {&a, &b}, [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) {
            x.accumulate(self.grad.cwiseProduct(y.value));
        }
        if (y.requires_grad) {
            y.accumulate(self.grad.cwiseProduct(x.value));
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    return detail::make_op<T>(a.value() * s, {&a}, [s](Node<T>& self) {
        self.inputs[0]->accumulate(self.grad * s);
    });
}

/// a + c for a constant matrix c (masks, offsets).
template <class T>
Var<T> add_const(const Var<T>& a, const Matrix<T>& c) {
    detail::check_shape(a.rows() == c.rows() && a.cols() == c.cols(), "add_const");
    return detail::make_op<T>(a.value() + c, {&a}, [](Node<T>& self) { self.inputs[0]->accumulate(self.grad); });
}

/// a ⊙ c for a constant matrix c.
template <class T>
Var<T> mul_const(const Var<T>& a, const Matrix<T>& c) {
    detail::check_shape(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const");
    return detail::make_op<T>(a.value().cwiseProduct(c), {&a}, [c](Node<T>& self) {
        self.inputs[0]->accumulate(self.grad.cwiseProduct(c));
    });
}

/// a + row, with row (1 x cols) broadcast over rows.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    detail::check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
    Matrix<T> out = a.value().rowwise() + row.value().row(0);
    return detail::make_op<T>(std::move(out), {&a, &row}, [](Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            self.inputs[0]->accumulate(self.grad);
        }
        if (self.inputs[1]->requires_grad) {
            self.inputs[1]->accumulate(self.grad.colwise().sum());
        }
    });
}

template <class T>
Var<T> abs(const Var<T>& a) {
    return detail::make_op<T>(a.value().cwiseAbs(), {&a}, [](Node<T>& self) {
        auto& x = *self.inputs[0];
        Matrix<T> sign = x.value.unaryExpr([](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
        x.accumulate(self.grad.cwiseProduct(sign));
    });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
    Matrix<T> y = a.value().array().tanh().matrix();
    return detail::make_op<T>(std::move(y), {&a}, [](Node<T>& self) {
        Matrix<T> d = (T(1) - self.value.array().square()).matrix();
        self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
    });
}

/// GELU, tanh approximation. Smooth everywhere, which keeps finite-difference
/// checks well-conditioned.
template <class T>
Var<T> gelu(const Var<T>& a) {
    static constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    static constexpr T c = T(0.044715);
    const auto& x = a.value().array();
    Matrix<T> y = (T(0.5) * x * (T(1) + (k * (x + c * x.cube())).tanh())).matrix();
    return detail::make_op<T>(std::move(y), {&a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        const auto& x = in.value.array();
        auto t = (k * (x + c * x.cube())).tanh();
        auto d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t.square()) * k * (T(1) + T(3) * c * x.square());
        in.accumulate((self.grad.array() * d).matrix());
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    detail::check_shape(a.cols() == b.rows(), "matmul");
    return detail::make_op<T>(a.value() * b.value(), {&a, &b}, [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) {
            x.accumulate(self.grad * y.value.transpose());
        }
        if (y.requires_grad) {
            y.accumulate(x.value.transpose() * self.grad);
        }
    });
}

/// a * b^T.
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    detail::check_shape(a.cols() == b.cols(), "matmul_nt");
    return detail::make_op<T>(a.value() * b.value().transpose(), {&a, &b}, [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) {
            x.accumulate(self.grad * y.value);
        }
        if (y.requires_grad) {
            y.accumulate(self.grad.transpose() * x.value);
        }
    });
}

/// x W^T + b with W (out x in) and b (1 x out).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::check_shape(x.cols() == w.cols() && b.rows() == 1 && b.cols() == w.rows(), "linear");
    Matrix<T> y = x.value() * w.value().transpose();
    y.rowwise() += b.value().row(0);
    return detail::make_op<T>(std::move(y), {&x, &w, &b}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& weight = *self.inputs[1];
        auto& bias = *self.inputs[2];
        if (in.requires_grad) {
            in.accumulate(self.grad * weight.value);
        }
        if (weight.requires_grad) {
            weight.accumulate(self.grad.transpose() * in.value);
        }
        if (bias.requires_grad) {
            bias.accumulate(self.grad.colwise().sum());
        }
    });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
    Matrix<T> t = a.value().transpose();
    return detail::make_op<T>(std::move(t), {&a}, [](Node<T>& self) {
        self.inputs[0]->accumulate(self.grad.transpose());
    });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

template <class T>
Matrix<T> softmax_rows_value(const Matrix<T>& x) {
    Matrix<T> y = x.colwise() - x.rowwise().maxCoeff();
    y = y.array().exp().matrix();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
}

template <class T>
Matrix<T> log_softmax_rows_value(const Matrix<T>& x) {
    Matrix<T> shifted = x.colwise() - x.rowwise().maxCoeff();
    Eigen::Matrix<T, Eigen::Dynamic, 1> lse = shifted.array().exp().rowwise().sum().log().matrix();
    return shifted.colwise() - lse;
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
    return detail::make_op<T>(softmax_rows_value(a.value()), {&a}, [](Node<T>& self) {
        const Matrix<T>& y = self.value;
        Eigen::Matrix<T, Eigen::Dynamic, 1> dot = self.grad.cwiseProduct(y).rowwise().sum();
        Matrix<T> g = (self.grad.colwise() - dot).cwiseProduct(y);
        self.inputs[0]->accumulate(g);
    });
}

template <class T>
Var<T> log_softmax_rows(const Var<T>& a) {
    return detail::make_op<T>(log_softmax_rows_value(a.value()), {&a}, [](Node<T>& self) {
        Matrix<T> p = self.value.array().exp().matrix();
        Eigen::Matrix<T, Eigen::Dynamic, 1> total = self.grad.rowwise().sum();
        Matrix<T> g = self.grad - (p.array().colwise() * total.array()).matrix();
        self.inputs[0]->accumulate(g);
    });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
template <class T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
    detail::check_shape(gain.cols() == x.cols() && bias.cols() == x.cols(), "layer_norm_rows");
    const Eigen::Index n = x.cols();
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.value().rowwise().mean();
    Matrix<T> centered = x.value().colwise() - mean;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std =
        (centered.array().square().rowwise().sum() / T(n) + eps).rsqrt().matrix();
    Matrix<T> xhat = (centered.array().colwise() * inv_std.array()).matrix();
    Matrix<T> y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    y.rowwise() += bias.value().row(0);
    return detail::make_op<T>(std::move(y), {&x, &gain, &bias}, [xhat, inv_std, n](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = *self.inputs[1];
        auto& b = *self.inputs[2];
        if (g.requires_grad) {
            g.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
        }
        if (b.requires_grad) {
            b.accumulate(self.grad.colwise().sum());
        }
        if (in.requires_grad) {
            Matrix<T> gx = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
            Eigen::Matrix<T, Eigen::Dynamic, 1> m1 = gx.rowwise().mean();
            Eigen::Matrix<T, Eigen::Dynamic, 1> m2 = gx.cwiseProduct(xhat).rowwise().sum() / T(n);
            Matrix<T> d = gx.colwise() - m1;
            d -= (xhat.array().colwise() * m2.array()).matrix();
            d = (d.array().colwise() * inv_std.array()).matrix();
            in.accumulate(d);
        }
    });
}

// ---------------------------------------------------------------------------
// Structural

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    ensure(!parts.empty(), "concat_rows of nothing");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        detail::check_shape(p.cols() == cols, "concat_rows");
        rows += p.rows();
    }
    Matrix<T> out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        offsets.push_back(r);
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return detail::make_op_n<T>(std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            auto& in = *self.inputs[i];
            if (in.requires_grad) {
                in.accumulate(self.grad.middleRows(offsets[i], in.value.rows()));
            }
        }
    });
}

template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    const Var<T> parts[] = {a, b};
    return concat_rows<T>(std::span<const Var<T>>(parts));
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    ensure(!parts.empty(), "concat_cols of nothing");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        detail::check_shape(p.rows() == rows, "concat_cols");
        cols += p.cols();
    }
    Matrix<T> out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        offsets.push_back(c);
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return detail::make_op_n<T>(std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            auto& in = *self.inputs[i];
            if (in.requires_grad) {
                in.accumulate(self.grad.middleCols(offsets[i], in.value.cols()));
            }
        }
    });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
    detail::check_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
    Matrix<T> out = a.value().middleRows(start, count);
    return detail::make_op<T>(std::move(out), {&a}, [start](Node<T>& self) {
        auto& in = *self.inputs[0];
        Matrix<T> g = Matrix<T>::Zero(in.value.rows(), in.value.cols());
        g.middleRows(start, self.grad.rows()) = self.grad;
        in.accumulate(g);
    });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
    detail::check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
    Matrix<T> out = a.value().middleCols(start, count);
    return detail::make_op<T>(std::move(out), {&a}, [start](Node<T>& self) {
        auto& in = *self.inputs[0];
        Matrix<T> g = Matrix<T>::Zero(in.value.rows(), in.value.cols());
        g.middleCols(start, self.grad.cols()) = self.grad;
        in.accumulate(g);
    });
}

/// Row lookup: out[i] = table[ids[i]].
template <class T>
Var<T> gather_rows(const Var<T>& table, std::vector<int> ids) {
    Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        detail::check_shape(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    return detail::make_op<T>(std::move(out), {&table}, [ids = std::move(ids)](Node<T>& self) {
        auto& in = *self.inputs[0];
        Matrix<T> g = Matrix<T>::Zero(in.value.rows(), in.value.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            g.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        }
        in.accumulate(g);
    });
}

/// out[i] = a[i, idx[i]], shape (rows x 1).
template <class T>
Var<T> take_along_rows(const Var<T>& a, std::vector<int> idx) {
    detail::check_shape(static_cast<Eigen::Index>(idx.size()) == a.rows(), "take_along_rows");
    Matrix<T> out(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        detail::check_shape(idx[i] >= 0 && idx[i] < a.cols(), "take_along_rows");
        out(i, 0) = a.value()(i, idx[i]);
    }
    return detail::make_op<T>(std::move(out), {&a}, [idx = std::move(idx)](Node<T>& self) {
        auto& in = *self.inputs[0];
        Matrix<T> g = Matrix<T>::Zero(in.value.rows(), in.value.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            g(i, idx[i]) = self.grad(i, 0);
        }
        in.accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
    Matrix<T> out(1, 1);
    out(0, 0) = a.value().sum();
    return detail::make_op<T>(std::move(out), {&a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        in.accumulate(Matrix<T>::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
    });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    ensure(a.value().size() > 0, "mean of empty matrix");
    return scale(sum_all(a), T(1) / static_cast<T>(a.value().size()));
}

/// Mean of equally-shaped scalars (1x1 vars).
template <class T>
Var<T> mean_of(std::span<const Var<T>> scalars) {
    ensure(!scalars.empty(), "mean of no terms");
    Var<T> acc = scalars.front();
    for (std::size_t i = 1; i < scalars.size(); ++i) {
        acc = add(acc, scalars[i]);
    }
    return scale(acc, T(1) / static_cast<T>(scalars.size()));
}

/// Inverted dropout. p == 0 or !training returns the input unchanged.
template <class T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) {
        return a;
    }
    Matrix<T> mask(a.rows(), a.cols());
    const T keep_scale = T(1) / static_cast<T>(1.0 - p);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.uniform() < p ? T(0) : keep_scale;
    }
    return mul_const(a, mask);
}

}  // namespace exo2ego::ag
