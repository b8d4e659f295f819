#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtfnet {

/// Scalar used by the production pipeline. The on-disk formats store
/// float32, so running the model at float keeps checkpoint round-trips
/// lossless. Numeric kernels are templated and can be instantiated at
/// double where higher precision is wanted (e.g. finite-difference checks).
using Real = float;

template <class S>
using DenseMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using DenseVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatR = DenseMatrix<Real>;
using VecR = DenseVector<Real>;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Deterministic 64-bit generator. All randomness in the library flows
/// through one of these, seeded explicitly, so runs are reproducible
/// bit-for-bit for a given seed.
using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) built directly from generator output; avoids
/// std::uniform_real_distribution so the stream does not depend on the
/// standard library implementation.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform draw in [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// In-place Fisher-Yates shuffle with an explicit generator.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[uniform_index(rng, i)]);
    }
}

/// Derives an independent stream from a base seed and a stream index
/// (splitmix64 finalizer), used to decorrelate per-epoch / per-batch RNGs.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace mtfnet
