#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtfnet/common.hpp"

namespace mtfnet::nn {

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};
struct NonFiniteValue : Error {
    explicit NonFiniteValue(const std::string& op) : Error("non-finite value produced by " + op) {}
};
struct NonScalarLoss : Error {
    NonScalarLoss() : Error("backward requires a 1x1 loss") {}
};
struct InvalidRate : Error {
    explicit InvalidRate(double r) : Error("dropout rate outside [0,1): " + std::to_string(r)) {}
};
struct NotADistribution : Error {
    NotADistribution() : Error("probabilities do not sum to 1") {}
};

/// One node of the dynamically built computation graph. Values are dense
/// row-major matrices; scalars are 1x1, row vectors 1xd. The backward
/// closure receives the node's accumulated output gradient and pushes
/// contributions into its parents.
template <class S>
struct Node {
    using Mat = DenseMatrix<S>;

    Mat value;
    Mat grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Mat&)> backward;

    void accumulate(const Mat& g) {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
        grad += g;
    }
};

/// Value-semantics handle to a graph node.
template <class S>
class Var {
public:
    using Mat = DenseMatrix<S>;

    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

    bool valid() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() != 0; }
    bool requires_grad() const { return node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    void zero_grad() const { node_->grad.resize(0, 0); }

    /// Overwrites the stored value in place (optimizer updates). Shape must
    /// not change. Mutates the shared node, like resetting through a
    /// shared_ptr.
    void assign(const Mat& v) const {
        if (v.rows() != rows() || v.cols() != cols()) throw ShapeMismatch("assign");
        node_->value = v;
    }

    std::shared_ptr<Node<S>> node() const { return node_; }

private:
    std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <class S>
Var<S> make_node(const char* op, DenseMatrix<S> value,
                 std::vector<std::shared_ptr<Node<S>>> parents,
                 std::function<void(const DenseMatrix<S>&)> backward) {
    if (!value.allFinite()) throw NonFiniteValue(op);
    auto node = std::make_shared<Node<S>>();
    node->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) node->requires_grad = true;
    node->parents = std::move(parents);
    if (node->requires_grad) node->backward = std::move(backward);
    return Var<S>(std::move(node));
}

}  // namespace detail

template <class S>
Var<S> constant(DenseMatrix<S> value) {
    return detail::make_node<S>("constant", std::move(value), {}, nullptr);
}

template <class S>
Var<S> parameter(DenseMatrix<S> value) {
    auto v = detail::make_node<S>("parameter", std::move(value), {}, nullptr);
    v.node()->requires_grad = true;
    return v;
}

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul");
    auto pa = a.node(), pb = b.node();
    return detail::make_node<S>(
        "matmul", a.value() * b.value(), {pa, pb},
        [pa, pb](const DenseMatrix<S>& g) {
            if (pa->requires_grad) pa->accumulate(g * pb->value.transpose());
            if (pb->requires_grad) pb->accumulate(pa->value.transpose() * g);
        });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("add");
    auto pa = a.node(), pb = b.node();
    return detail::make_node<S>("add", a.value() + b.value(), {pa, pb},
                                [pa, pb](const DenseMatrix<S>& g) {
                                    if (pa->requires_grad) pa->accumulate(g);
                                    if (pb->requires_grad) pb->accumulate(g);
                                });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("sub");
    auto pa = a.node(), pb = b.node();
    return detail::make_node<S>("sub", a.value() - b.value(), {pa, pb},
                                [pa, pb](const DenseMatrix<S>& g) {
                                    if (pa->requires_grad) pa->accumulate(g);
                                    if (pb->requires_grad) pb->accumulate(-g);
                                });
}

template <class S>
Var<S> cmul(const Var<S>& a, const Var<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("cmul");
    auto pa = a.node(), pb = b.node();
    return detail::make_node<S>(
        "cmul", a.value().cwiseProduct(b.value()), {pa, pb},
        [pa, pb](const DenseMatrix<S>& g) {
            if (pa->requires_grad) pa->accumulate(g.cwiseProduct(pb->value));
            if (pb->requires_grad) pb->accumulate(g.cwiseProduct(pa->value));
        });
}

template <class S>
Var<S> cdiv(const Var<S>& a, const Var<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("cdiv");
    auto pa = a.node(), pb = b.node();
    return detail::make_node<S>(
        "cdiv", a.value().cwiseQuotient(b.value()), {pa, pb},
        [pa, pb](const DenseMatrix<S>& g) {
            if (pa->requires_grad) pa->accumulate(g.cwiseQuotient(pb->value));
            if (pb->requires_grad)
                pb->accumulate(
                    (-g.array() * pa->value.array() / pb->value.array().square()).matrix());
        });
}

template <class S>
Var<S> scale(const Var<S>& a, S c) {
    auto pa = a.node();
    return detail::make_node<S>("scale", DenseMatrix<S>(a.value() * c), {pa},
                                [pa, c](const DenseMatrix<S>& g) { pa->accumulate(g * c); });
}

/// x (n x d) plus a broadcast row vector (1 x d).
template <class S>
Var<S> add_rowvec(const Var<S>& x, const Var<S>& b) {
    if (b.rows() != 1 || x.cols() != b.cols()) throw ShapeMismatch("add_rowvec");
    auto px = x.node(), pb = b.node();
    return detail::make_node<S>(
        "add_rowvec", DenseMatrix<S>(x.value().rowwise() + b.value().row(0)), {px, pb},
        [px, pb](const DenseMatrix<S>& g) {
            if (px->requires_grad) px->accumulate(g);
            if (pb->requires_grad) pb->accumulate(g.colwise().sum());
        });
}

template <class S>
Var<S> relu(const Var<S>& x) {
    auto px = x.node();
    return detail::make_node<S>(
        "relu", x.value().cwiseMax(S(0)), {px},
        [px](const DenseMatrix<S>& g) {
            px->accumulate(
                (g.array() * (px->value.array() > S(0)).template cast<S>()).matrix());
        });
}

template <class S>
Var<S> abs_val(const Var<S>& x) {
    auto px = x.node();
    return detail::make_node<S>(
        "abs", x.value().cwiseAbs(), {px},
        [px](const DenseMatrix<S>& g) {
            px->accumulate((g.array() * px->value.array().sign()).matrix());
        });
}

template <class S>
Var<S> softplus(const Var<S>& x) {
    auto px = x.node();
    DenseMatrix<S> y = x.value().unaryExpr([](S v) {
        return v > S(20) ? v : std::log1p(std::exp(v));
    });
    return detail::make_node<S>(
        "softplus", std::move(y), {px},
        [px](const DenseMatrix<S>& g) {
            DenseMatrix<S> sig = px->value.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
            px->accumulate(g.cwiseProduct(sig));
        });
}

/// Row-wise softmax with max-subtraction for stability.
template <class S>
Var<S> softmax_rows(const Var<S>& x) {
    if (!x.value().allFinite()) throw NonFiniteValue("softmax input");
    DenseMatrix<S> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S shift = x.value().row(r).maxCoeff();
        y.row(r) = (x.value().row(r).array() - shift).exp();
        y.row(r) /= y.row(r).sum();
    }
    auto px = x.node();
    auto vy = detail::make_node<S>("softmax", std::move(y), {px}, nullptr);
    auto self = vy.node().get();
    if (vy.node()->requires_grad) {
        vy.node()->backward = [px, self](const DenseMatrix<S>& g) {
            const DenseMatrix<S>& yv = self->value;
            DenseMatrix<S> dx(g.rows(), g.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const S dot = g.row(r).dot(yv.row(r));
                dx.row(r) = ((g.row(r).array() - dot) * yv.row(r).array()).matrix();
            }
            px->accumulate(dx);
        };
    }
    return vy;
}

template <class S>
Var<S> transpose(const Var<S>& x) {
    auto px = x.node();
    return detail::make_node<S>("transpose", x.value().transpose(), {px},
                                [px](const DenseMatrix<S>& g) { px->accumulate(g.transpose()); });
}

template <class S>
Var<S> slice_rows(const Var<S>& x, Eigen::Index r0, Eigen::Index count) {
    if (r0 < 0 || r0 + count > x.rows()) throw ShapeMismatch("slice_rows");
    auto px = x.node();
    return detail::make_node<S>(
        "slice_rows", x.value().middleRows(r0, count), {px},
        [px, r0, count](const DenseMatrix<S>& g) {
            DenseMatrix<S> full = DenseMatrix<S>::Zero(px->value.rows(), px->value.cols());
            full.middleRows(r0, count) = g;
            px->accumulate(full);
        });
}

template <class S>
Var<S> slice_cols(const Var<S>& x, Eigen::Index c0, Eigen::Index count) {
    if (c0 < 0 || c0 + count > x.cols()) throw ShapeMismatch("slice_cols");
    auto px = x.node();
    return detail::make_node<S>(
        "slice_cols", x.value().middleCols(c0, count), {px},
        [px, c0, count](const DenseMatrix<S>& g) {
            DenseMatrix<S> full = DenseMatrix<S>::Zero(px->value.rows(), px->value.cols());
            full.middleCols(c0, count) = g;
            px->accumulate(full);
        });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    std::vector<std::shared_ptr<Node<S>>> parents;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeMismatch("concat_rows");
        rows += p.rows();
        parents.push_back(p.node());
    }
    DenseMatrix<S> value(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        value.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    auto ps = parents;
    return detail::make_node<S>(
        "concat_rows", std::move(value), std::move(parents),
        [ps](const DenseMatrix<S>& g) {
            Eigen::Index at = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) p->accumulate(g.middleRows(at, p->value.rows()));
                at += p->value.rows();
            }
        });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    std::vector<std::shared_ptr<Node<S>>> parents;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeMismatch("concat_cols");
        cols += p.cols();
        parents.push_back(p.node());
    }
    DenseMatrix<S> value(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        value.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    auto ps = parents;
    return detail::make_node<S>(
        "concat_cols", std::move(value), std::move(parents),
        [ps](const DenseMatrix<S>& g) {
            Eigen::Index at = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) p->accumulate(g.middleCols(at, p->value.cols()));
                at += p->value.cols();
            }
        });
}

template <class S>
Var<S> replicate_rows(const Var<S>& row, Eigen::Index n) {
    if (row.rows() != 1) throw ShapeMismatch("replicate_rows wants 1 x d");
    auto p = row.node();
    return detail::make_node<S>(
        "replicate_rows", row.value().replicate(n, 1), {p},
        [p](const DenseMatrix<S>& g) { p->accumulate(g.colwise().sum()); });
}

template <class S>
Var<S> replicate_cols(const Var<S>& col, Eigen::Index d) {
    if (col.cols() != 1) throw ShapeMismatch("replicate_cols wants n x 1");
    auto p = col.node();
    return detail::make_node<S>(
        "replicate_cols", col.value().replicate(1, d), {p},
        [p](const DenseMatrix<S>& g) { p->accumulate(g.rowwise().sum()); });
}

template <class S>
Var<S> mean_rows(const Var<S>& x) {
    auto px = x.node();
    const S inv = S(1) / static_cast<S>(x.rows());
    return detail::make_node<S>(
        "mean_rows", DenseMatrix<S>(x.value().colwise().mean()), {px},
        [px, inv](const DenseMatrix<S>& g) {
            px->accumulate((g * inv).replicate(px->value.rows(), 1));
        });
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
    auto px = x.node();
    DenseMatrix<S> v(1, 1);
    v(0, 0) = x.value().sum();
    return detail::make_node<S>(
        "sum_all", std::move(v), {px},
        [px](const DenseMatrix<S>& g) {
            px->accumulate(DenseMatrix<S>::Constant(px->value.rows(), px->value.cols(), g(0, 0)));
        });
}

/// Divides each row by its sum; rows summing to <= 0 become all-zero (the
/// unvisited-state convention of transition matrices).
template <class S>
Var<S> normalize_rows(const Var<S>& x) {
    DenseVector<S> sums = x.value().rowwise().sum();
    DenseMatrix<S> y = x.value();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        if (sums(r) > S(0))
            y.row(r) /= sums(r);
        else
            y.row(r).setZero();
    }
    auto px = x.node();
    auto vy = detail::make_node<S>("normalize_rows", std::move(y), {px}, nullptr);
    auto self = vy.node().get();
    if (vy.node()->requires_grad) {
        vy.node()->backward = [px, self, sums](const DenseMatrix<S>& g) {
            DenseMatrix<S> dx = DenseMatrix<S>::Zero(g.rows(), g.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                if (!(sums(r) > S(0))) continue;
                const S dot = g.row(r).dot(self->value.row(r));
                dx.row(r) = (g.row(r).array() - dot) / sums(r);
            }
            px->accumulate(dx);
        };
    }
    return vy;
}

/// Inclusive prefix sums of a 1 x k row.
template <class S>
Var<S> cumsum_row(const Var<S>& x) {
    if (x.rows() != 1) throw ShapeMismatch("cumsum_row wants 1 x k");
    DenseMatrix<S> y = x.value();
    for (Eigen::Index j = 1; j < y.cols(); ++j) y(0, j) += y(0, j - 1);
    auto px = x.node();
    return detail::make_node<S>(
        "cumsum_row", std::move(y), {px},
        [px](const DenseMatrix<S>& g) {
            DenseMatrix<S> dx = g;
            for (Eigen::Index j = dx.cols() - 2; j >= 0; --j) dx(0, j) += dx(0, j + 1);
            px->accumulate(dx);
        });
}

/// Row-major flatten to 1 x (rows*cols).
template <class S>
Var<S> flatten_row(const Var<S>& x) {
    const Eigen::Index r = x.rows(), c = x.cols();
    DenseMatrix<S> y(1, r * c);
    for (Eigen::Index i = 0; i < r; ++i) y.middleCols(i * c, c) = x.value().row(i);
    auto px = x.node();
    return detail::make_node<S>(
        "flatten_row", std::move(y), {px},
        [px, r, c](const DenseMatrix<S>& g) {
            DenseMatrix<S> dx(r, c);
            for (Eigen::Index i = 0; i < r; ++i) dx.row(i) = g.middleCols(i * c, c);
            px->accumulate(dx);
        });
}

/// Inverted dropout: zeroes entries with probability rate and scales
/// survivors by 1/(1-rate). Identity in eval mode or at rate 0.
template <class S>
Var<S> dropout(const Var<S>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidRate(rate);
    if (!training || rate == 0.0) return x;
    const S keep_scale = S(1.0 / (1.0 - rate));
    DenseMatrix<S> mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = uniform01(rng) < rate ? S(0) : keep_scale;
    auto px = x.node();
    return detail::make_node<S>(
        "dropout", x.value().cwiseProduct(mask), {px},
        [px, mask](const DenseMatrix<S>& g) { px->accumulate(g.cwiseProduct(mask)); });
}

/// -log(p[target] + eps) for a 1 x C probability row.
template <class S>
Var<S> cross_entropy(const Var<S>& probs, int target) {
    if (probs.rows() != 1) throw ShapeMismatch("cross_entropy wants 1 x C");
    if (target < 0 || target >= probs.cols()) throw Error("target class out of range");
    const double total = probs.value().template cast<double>().sum();
    if (std::abs(total - 1.0) > 1e-6) throw NotADistribution();
    constexpr double kEps = 1e-12;
    const S p = probs.value()(0, target);
    DenseMatrix<S> v(1, 1);
    v(0, 0) = static_cast<S>(-std::log(static_cast<double>(p) + kEps));
    auto pp = probs.node();
    return detail::make_node<S>(
        "cross_entropy", std::move(v), {pp},
        [pp, target, p](const DenseMatrix<S>& g) {
            DenseMatrix<S> dx = DenseMatrix<S>::Zero(1, pp->value.cols());
            dx(0, target) = -g(0, 0) / static_cast<S>(static_cast<double>(p) + kEps);
            pp->accumulate(dx);
        });
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node with requires_grad set; leaves keep theirs until
/// zero_grad.
template <class S>
void backward(const Var<S>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw NonScalarLoss();

    // Iterative post-order DFS over parent edges; the reversed order visits
    // every consumer before its producers.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<S>* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->accumulate(DenseMatrix<S>::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* node = *it;
        if (node->backward && node->grad.size() != 0) node->backward(node->grad);
    }
}

}  // namespace mtfnet::nn
