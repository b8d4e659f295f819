#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mtfnet/autodiff.hpp"

namespace mtfnet::nn {

struct InvalidHeadCount : Error {
    InvalidHeadCount(int width, int heads)
        : Error("width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                " heads") {}
};
struct OddDimension : Error {
    explicit OddDimension(int d) : Error("d_model must be even, got " + std::to_string(d)) {}
};

/// Named leaf parameters in creation order. Creation order is fixed by the
/// model constructor, which makes initialization and checkpoints
/// reproducible.
template <class S>
class ParamStore {
public:
    Var<S> create(const std::string& name, DenseMatrix<S> init) {
        if (index_.count(name)) throw Error("duplicate parameter: " + name);
        Var<S> v = parameter<S>(std::move(init));
        index_.emplace(name, items_.size());
        items_.emplace_back(name, v);
        return v;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Var<S> at(const std::string& name) const { return items_[index_.at(name)].second; }
    std::size_t size() const { return items_.size(); }
    const std::vector<std::pair<std::string, Var<S>>>& items() const { return items_; }

    void zero_grad() {
        for (auto& [name, v] : items_) v.zero_grad();
    }

    std::vector<DenseMatrix<S>> snapshot() const {
        std::vector<DenseMatrix<S>> out;
        out.reserve(items_.size());
        for (const auto& [name, v] : items_) out.push_back(v.value());
        return out;
    }

    void restore(const std::vector<DenseMatrix<S>>& values) {
        if (values.size() != items_.size()) throw Error("snapshot size mismatch");
        for (std::size_t i = 0; i < items_.size(); ++i) items_[i].second.assign(values[i]);
    }

    /// Parameters with no accumulated gradient after a backward pass
    /// (never used by the loss graph).
    std::vector<std::string> disconnected() const {
        std::vector<std::string> out;
        for (const auto& [name, v] : items_)
            if (!v.has_grad()) out.push_back(name);
        return out;
    }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& [name, v] : items_)
            if (v.has_grad()) sq += v.grad().template cast<double>().squaredNorm();
        return std::sqrt(sq);
    }

private:
    std::vector<std::pair<std::string, Var<S>>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Glorot/Xavier uniform in +-sqrt(6 / (fan_in + fan_out)).
template <class S>
DenseMatrix<S> xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseMatrix<S> w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < fan_in; ++i)
        for (Eigen::Index j = 0; j < fan_out; ++j)
            w(i, j) = static_cast<S>(uniform(rng, -bound, bound));
    return w;
}

/// Affine map y = x W + b for row-stacked inputs: W is (in x out), b (1 x out).
template <class S>
struct LinearLayer {
    Var<S> weight;
    Var<S> bias;

    static LinearLayer create(ParamStore<S>& params, const std::string& name, Eigen::Index in,
                              Eigen::Index out, Rng& rng) {
        LinearLayer layer;
        layer.weight = params.create(name + ".W", xavier_uniform<S>(in, out, rng));
        layer.bias = params.create(name + ".b", DenseMatrix<S>::Zero(1, out));
        return layer;
    }
};

template <class S>
Var<S> linear(const Var<S>& x, const LinearLayer<S>& layer) {
    return add_rowvec(matmul(x, layer.weight), layer.bias);
}

/// Softmax along an axis (1 = along each row, 0 = along each column).
template <class S>
Var<S> softmax(const Var<S>& x, int axis = 1) {
    if (axis == 1) return softmax_rows(x);
    if (axis == 0) return transpose(softmax_rows(transpose(x)));
    throw Error("softmax axis must be 0 or 1");
}

/// Sinusoidal table: PE(pos, 2i) = sin(pos / 10000^{2i/d}), PE(pos, 2i+1) the
/// matching cosine.
template <class S>
DenseMatrix<S> positional_encoding(int length, int d_model) {
    if (d_model % 2 != 0) throw OddDimension(d_model);
    DenseMatrix<S> pe(length, d_model);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; 2 * i < d_model; ++i) {
            const double angle = pos / std::pow(10000.0, 2.0 * i / d_model);
            pe(pos, 2 * i) = static_cast<S>(std::sin(angle));
            pe(pos, 2 * i + 1) = static_cast<S>(std::cos(angle));
        }
    }
    return pe;
}

template <class S>
struct AttentionResult {
    Var<S> context;                    // seq x width, heads concatenated
    std::vector<Var<S>> head_weights;  // per head, seq x seq row-stochastic
};

/// Scaled dot-product attention. Columns are split into `heads` groups of
/// d_k = width / heads; each head computes softmax(Q K^T / sqrt(d_k)) V and
/// the contexts are concatenated.
template <class S>
AttentionResult<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int heads) {
    const Eigen::Index width = q.cols();
    if (k.cols() != width || v.cols() != width) throw ShapeMismatch("attention projections");
    if (q.rows() != k.rows() || q.rows() != v.rows()) throw ShapeMismatch("attention sequence");
    if (heads < 1 || width % heads != 0) throw InvalidHeadCount(static_cast<int>(width), heads);

    const Eigen::Index dk = width / heads;
    const S inv_sqrt_dk = S(1.0 / std::sqrt(static_cast<double>(dk)));
    AttentionResult<S> out;
    std::vector<Var<S>> contexts;
    for (int h = 0; h < heads; ++h) {
        const Var<S> qh = slice_cols(q, h * dk, dk);
        const Var<S> kh = slice_cols(k, h * dk, dk);
        const Var<S> vh = slice_cols(v, h * dk, dk);
        const Var<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
        const Var<S> weights = softmax_rows(scores);
        out.head_weights.push_back(weights);
        contexts.push_back(matmul(weights, vh));
    }
    out.context = heads == 1 ? contexts.front() : concat_cols(contexts);
    return out;
}

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
};

/// AdamW with global gradient-norm clipping and decoupled weight decay
/// (decay scales the parameter directly by lr * decay, outside the moment
/// estimates).
template <class S>
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    const AdamWConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_; }

    void step(ParamStore<S>& params) {
        if (m_.empty()) {
            for (const auto& [name, v] : params.items()) {
                m_.push_back(DenseMatrix<S>::Zero(v.rows(), v.cols()));
                v_.push_back(DenseMatrix<S>::Zero(v.rows(), v.cols()));
            }
        }
        if (m_.size() != params.size()) throw ShapeMismatch("optimizer state vs parameters");
        ++step_;

        double clip_scale = 1.0;
        const double norm = params.grad_norm();
        if (config_.clip_norm > 0.0 && norm > config_.clip_norm)
            clip_scale = config_.clip_norm / norm;

        const S bc1 = S(1.0 - std::pow(config_.beta1, static_cast<double>(step_)));
        const S bc2 = S(1.0 - std::pow(config_.beta2, static_cast<double>(step_)));
        std::size_t i = 0;
        for (const auto& [name, v] : params.items()) {
            const DenseMatrix<S> g = v.has_grad()
                                         ? DenseMatrix<S>(v.grad() * S(clip_scale))
                                         : DenseMatrix<S>::Zero(v.rows(), v.cols());
            auto& m = m_[i];
            auto& sv = v_[i];
            m = S(config_.beta1) * m + S(1.0 - config_.beta1) * g;
            sv = S(config_.beta2) * sv + S(1.0 - config_.beta2) * g.cwiseProduct(g);
            const DenseMatrix<S> m_hat = m / bc1;
            const DenseMatrix<S> v_hat = sv / bc2;
            DenseMatrix<S> update =
                (m_hat.array() / (v_hat.array().sqrt() + S(config_.eps))).matrix();
            update += S(config_.weight_decay) * v.value();
            v.assign(v.value() - S(config_.lr) * update);
            ++i;
        }
    }

    std::vector<DenseMatrix<S>>& first_moments() { return m_; }
    std::vector<DenseMatrix<S>>& second_moments() { return v_; }
    const std::vector<DenseMatrix<S>>& first_moments() const { return m_; }
    const std::vector<DenseMatrix<S>>& second_moments() const { return v_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    AdamWConfig config_;
    std::int64_t step_ = 0;
    std::vector<DenseMatrix<S>> m_;
    std::vector<DenseMatrix<S>> v_;
};

}  // namespace mtfnet::nn
