#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mtfnet/flow.hpp"

namespace mtfnet {

struct InvalidQ : Error {
    explicit InvalidQ(int q) : Error("bin count must be >= 2, got " + std::to_string(q)) {}
};
struct NonFiniteInput : Error {
    NonFiniteInput() : Error("series contains non-finite values") {}
};
struct InvalidTemperature : Error {
    explicit InvalidTemperature(double t) : Error("temperature must be > 0, got " + std::to_string(t)) {}
};
struct BinOutOfRange : Error {
    BinOutOfRange(int b, int q)
        : Error("bin index " + std::to_string(b) + " outside [0," + std::to_string(q) + ")") {}
};
struct InvalidOutputSize : Error {
    InvalidOutputSize(int m, int n)
        : Error("output size " + std::to_string(m) + " invalid for input size " + std::to_string(n)) {}
};
struct InvalidSigma : Error {
    explicit InvalidSigma(double s) : Error("sigma must be > 0, got " + std::to_string(s)) {}
};

enum class QuantMode { GaussianFixed, Adaptive };

inline const char* to_string(QuantMode m) {
    return m == QuantMode::GaussianFixed ? "gaussian" : "adaptive";
}

/// Inverse standard normal CDF by bisection on the erf-based CDF.
/// Deterministic and accurate to ~1e-12.
double normal_quantile(double p);

/// Phi^{-1}(i/Q) for i = 1..Q-1: the classical fixed breakpoints.
template <class S>
DenseVector<S> gaussian_breakpoints(int q) {
    if (q < 2) throw InvalidQ(q);
    DenseVector<S> theta(q - 1);
    for (int i = 1; i < q; ++i)
        theta(i - 1) = static_cast<S>(normal_quantile(static_cast<double>(i) / q));
    return theta;
}

/// Quantizer state for one dataset: Q bins bounded by Q-1 strictly
/// increasing boundaries over the standardized value range.
template <class S>
struct QuantizerParams {
    int q = 8;
    DenseVector<S> boundaries;  // length q-1, strictly increasing
    QuantMode mode = QuantMode::GaussianFixed;
    S temperature = S(0.1);  // soft-assignment sharpness, adaptive mode

    static QuantizerParams gaussian(int q) {
        QuantizerParams p;
        p.q = q;
        p.boundaries = gaussian_breakpoints<S>(q);
        p.mode = QuantMode::GaussianFixed;
        return p;
    }
    static QuantizerParams adaptive(int q, S temperature) {
        QuantizerParams p;
        p.q = q;
        p.boundaries = gaussian_breakpoints<S>(q);
        p.mode = QuantMode::Adaptive;
        p.temperature = temperature;
        return p;
    }

    void validate() const {
        if (q < 2) throw InvalidQ(q);
        if (boundaries.size() != q - 1) throw InvalidQ(q);
        for (int i = 1; i < boundaries.size(); ++i)
            if (!(boundaries(i) > boundaries(i - 1))) throw Error("boundaries not increasing");
        if (mode == QuantMode::Adaptive && !(temperature > S(0)))
            throw InvalidTemperature(static_cast<double>(temperature));
    }
};

/// Zero-mean unit-variance copy (population variance). Constant series are
/// left to the caller: is_constant reports variance below tolerance.
template <class S>
bool is_constant(const DenseVector<S>& x) {
    const S mean = x.mean();
    const S var = (x.array() - mean).square().mean();
    return !(var > S(1e-24));
}

template <class S>
DenseVector<S> standardize(const DenseVector<S>& x) {
    const S mean = x.mean();
    const S sd = std::sqrt((x.array() - mean).square().mean());
    return (x.array() - mean) / sd;
}

/// Bin centers and widths implied by the boundaries: interior bins use
/// midpoints, the two outer (half-open) bins mirror the adjacent interior
/// bin's width so every bin reads as [c - w/2, c + w/2]. With Q = 2 there is
/// no interior bin and a unit half-width is used.
template <class S>
void bin_centers_widths(const DenseVector<S>& theta, DenseVector<S>& centers,
                        DenseVector<S>& widths) {
    const int q = static_cast<int>(theta.size()) + 1;
    centers.resize(q);
    widths.resize(q);
    if (q == 2) {
        centers << theta(0) - S(1), theta(0) + S(1);
        widths << S(2), S(2);
        return;
    }
    for (int b = 1; b < q - 1; ++b) {
        centers(b) = (theta(b - 1) + theta(b)) / S(2);
        widths(b) = theta(b) - theta(b - 1);
    }
    widths(0) = widths(1);
    centers(0) = theta(0) - widths(0) / S(2);
    widths(q - 1) = widths(q - 2);
    centers(q - 1) = theta(q - 2) + widths(q - 1) / S(2);
}

/// Hard binning: value x lands in bin b with theta_b <= x < theta_{b+1}
/// (theta_0 = -inf, theta_Q = +inf). GaussianFixed mode standardizes first;
/// constant series map every sample to the middle bin floor(Q/2).
template <class S>
std::vector<int> quantize(const DenseVector<S>& x, const QuantizerParams<S>& params) {
    params.validate();
    if (x.size() < 2) throw Error("series length must be >= 2");
    if (!x.allFinite()) throw NonFiniteInput();

    DenseVector<S> values = x;
    if (params.mode == QuantMode::GaussianFixed) {
        if (is_constant(values)) {
            return std::vector<int>(static_cast<std::size_t>(x.size()), params.q / 2);
        }
        values = standardize(values);
    }
    std::vector<int> bins(static_cast<std::size_t>(values.size()));
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        int b = 0;
        while (b < params.q - 1 && values(k) >= params.boundaries(b)) ++b;
        bins[static_cast<std::size_t>(k)] = b;
    }
    return bins;
}

/// Soft membership matrix (n x Q): row k is a softmax over bins of the
/// negative distance from x_k to each bin center, measured in units of that
/// bin's width so the temperature -> 0 argmax reproduces hard binning.
template <class S>
DenseMatrix<S> soft_assign(const DenseVector<S>& x, const QuantizerParams<S>& params) {
    params.validate();
    if (!(params.temperature > S(0)))
        throw InvalidTemperature(static_cast<double>(params.temperature));
    if (!x.allFinite()) throw NonFiniteInput();

    DenseVector<S> centers, widths;
    bin_centers_widths(params.boundaries, centers, widths);

    const auto n = x.size();
    DenseMatrix<S> logits(n, params.q);
    for (Eigen::Index k = 0; k < n; ++k)
        for (int b = 0; b < params.q; ++b)
            logits(k, b) = -std::abs(x(k) - centers(b)) / widths(b) / params.temperature;

    DenseMatrix<S> memberships(n, params.q);
    for (Eigen::Index k = 0; k < n; ++k) {
        const S shift = logits.row(k).maxCoeff();
        const DenseVector<S> e = (logits.row(k).transpose().array() - shift).exp();
        memberships.row(k) = e.transpose() / e.sum();
    }
    return memberships;
}

/// Empirical transition matrix: W(j, i) is the fraction of steps leaving
/// state j that arrive at state i. Rows for states never left stay all-zero.
template <class S>
DenseMatrix<S> transition_matrix(const std::vector<int>& bins, int q) {
    if (q < 2) throw InvalidQ(q);
    for (const int b : bins)
        if (b < 0 || b >= q) throw BinOutOfRange(b, q);

    DenseMatrix<S> counts = DenseMatrix<S>::Zero(q, q);
    for (std::size_t k = 0; k + 1 < bins.size(); ++k)
        counts(bins[k], bins[k + 1]) += S(1);
    for (int j = 0; j < q; ++j) {
        const S total = counts.row(j).sum();
        if (total > S(0)) counts.row(j) /= total;
    }
    return counts;
}

/// Expected transition matrix from soft memberships: the normalized sum of
/// outer products of consecutive membership rows. Recovers the hard count
/// matrix when memberships are one-hot.
template <class S>
DenseMatrix<S> soft_transition_matrix(const DenseMatrix<S>& memberships) {
    const auto n = memberships.rows();
    const DenseMatrix<S> head = memberships.topRows(n - 1);
    const DenseMatrix<S> tail = memberships.bottomRows(n - 1);
    DenseMatrix<S> counts = head.transpose() * tail;
    for (Eigen::Index j = 0; j < counts.rows(); ++j) {
        const S total = counts.row(j).sum();
        if (total > S(0)) counts.row(j) /= total;
    }
    return counts;
}

/// Markov transition field: M(i, j) = W(bin_i, bin_j) over all time-step
/// pairs.
template <class S>
DenseMatrix<S> mtf_field(const std::vector<int>& bins, const DenseMatrix<S>& w) {
    const int q = static_cast<int>(w.rows());
    for (const int b : bins)
        if (b < 0 || b >= q) throw BinOutOfRange(b, q);
    const auto n = static_cast<Eigen::Index>(bins.size());
    DenseMatrix<S> field(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            field(i, j) = w(bins[static_cast<std::size_t>(i)], bins[static_cast<std::size_t>(j)]);
    return field;
}

/// Soft field: S W S^T, the expectation of mtf_field under the membership
/// distribution.
template <class S>
DenseMatrix<S> soft_field(const DenseMatrix<S>& memberships, const DenseMatrix<S>& w) {
    return memberships * w * memberships.transpose();
}

/// Reflected index into [0, n): -1 -> 0, -2 -> 1, n -> n-1, ...
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
    while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
    return i;
}

/// One-dimensional blur matrix B (n x n): discrete Gaussian of radius
/// ceil(3 sigma), renormalized to sum 1, edges folded back by reflection.
/// B is doubly stochastic, so blurring preserves the matrix mean.
template <class S>
DenseMatrix<S> blur_matrix(int n, double sigma) {
    if (!(sigma > 0.0)) throw InvalidSigma(sigma);
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    DenseVector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k)
        kernel(k + radius) = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel /= kernel.sum();

    DenseMatrix<double> b = DenseMatrix<double>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = -radius; k <= radius; ++k)
            b(i, reflect_index(i + k, n)) += kernel(k + radius);
    return b.cast<S>();
}

/// Block-mean pooling matrix P (m x n) over near-equal blocks.
template <class S>
DenseMatrix<S> pool_matrix(int m, int n) {
    if (m < 1 || m > n) throw InvalidOutputSize(m, n);
    DenseMatrix<S> p = DenseMatrix<S>::Zero(m, n);
    for (int b = 0; b < m; ++b) {
        const int lo = b * n / m;
        const int hi = (b + 1) * n / m;
        for (int i = lo; i < hi; ++i) p(b, i) = S(1) / static_cast<S>(hi - lo);
    }
    return p;
}

/// Combined blur-then-pool operator R: gaussian_blur_pool(M) = R M R^T.
template <class S>
DenseMatrix<S> blur_pool_operator(int n, int m, double sigma) {
    return DenseMatrix<S>(pool_matrix<S>(m, n) * blur_matrix<S>(n, sigma));
}

/// Gaussian blur (separable, reflected edges) followed by m x m block-mean
/// pooling.
template <class S>
DenseMatrix<S> gaussian_blur_pool(const DenseMatrix<S>& field, int m, double sigma) {
    const int n = static_cast<int>(field.rows());
    if (m < 1 || m > n) throw InvalidOutputSize(m, n);
    const DenseMatrix<S> r = blur_pool_operator<S>(n, m, sigma);
    return DenseMatrix<S>(r * field * r.transpose());
}

template <class S>
struct MtfMatrix {
    int raw_size = 0;      // n, the series length
    int blurred_size = 0;  // m
    DenseMatrix<S> values; // m x m, entries in [0, 1]
};

template <class S>
struct MtfTensor {
    int slot_index = 0;
    std::shared_ptr<const LinkTable> links;
    std::vector<MtfMatrix<S>> fields;  // L entries in link-index order
};

/// Full per-series pipeline: standardize, (soft-)quantize, transition
/// matrix, field, blur + pool. Constant series map to the middle bin in both
/// modes, producing the single-state constant field.
template <class S>
DenseMatrix<S> encode_series(const DenseVector<S>& x, const QuantizerParams<S>& params, int m,
                             double sigma) {
    const int n = static_cast<int>(x.size());
    if (m > n) throw InvalidOutputSize(m, n);
    if (!x.allFinite()) throw NonFiniteInput();

    DenseMatrix<S> field;
    if (is_constant(x)) {
        const std::vector<int> bins(static_cast<std::size_t>(n), params.q / 2);
        field = mtf_field(bins, transition_matrix<S>(bins, params.q));
    } else if (params.mode == QuantMode::Adaptive) {
        const DenseMatrix<S> memberships = soft_assign(standardize(x), params);
        field = soft_field(memberships, soft_transition_matrix(memberships));
    } else {
        const std::vector<int> bins = quantize(x, params);
        field = mtf_field(bins, transition_matrix<S>(bins, params.q));
    }
    return gaussian_blur_pool(field, m, sigma);
}

/// Encodes every link series of a slot. Errors from a single series are
/// rethrown with the offending link attached.
template <class S>
MtfTensor<S> encode_slot(const SlotSeries& slot, const QuantizerParams<S>& params, int m,
                         double sigma) {
    params.validate();
    MtfTensor<S> out;
    out.slot_index = slot.slot_index;
    out.links = slot.links;
    out.fields.reserve(static_cast<std::size_t>(slot.link_count()));
    for (int l = 0; l < slot.link_count(); ++l) {
        DenseVector<S> x = slot.series.row(l).transpose().cast<S>();
        try {
            MtfMatrix<S> mm;
            mm.raw_size = slot.samples();
            mm.blurred_size = m;
            mm.values = encode_series(x, params, m, sigma);
            out.fields.push_back(std::move(mm));
        } catch (const Error& e) {
            const LinkKey& key = slot.links->key(l);
            throw Error(std::string(e.what()) + " (link " + key.src + "->" + key.dst + " " +
                        to_string(key.protocol) + ")");
        }
    }
    return out;
}

}  // namespace mtfnet
