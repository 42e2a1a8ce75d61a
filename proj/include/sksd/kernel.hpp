#pragma once

#include <algorithm>
#include <vector>

#include "sksd/common.hpp"

namespace sksd {

enum class KernelFamily { RBF };

/// One-dimensional translation-invariant RBF kernel k(a,b) = exp(-(a-b)^2 / h)
/// with squared length scale h = bandwidth_sq.
struct KernelSpec {
    KernelFamily family = KernelFamily::RBF;
    double bandwidth_sq = 1.0;

    void validate() const { require(bandwidth_sq > 0.0, "KernelSpec: bandwidth_sq must be positive"); }
};

inline double rbf_eval(double a, double b, const KernelSpec& spec) {
    require_finite(a, "rbf_eval a");
    require_finite(b, "rbf_eval b");
    spec.validate();
    const double d = a - b;
    return std::exp(-d * d / spec.bandwidth_sq);
}

/// d/da k(a,b)
inline double rbf_grad1(double a, double b, const KernelSpec& spec) {
    require_finite(a, "rbf_grad1 a");
    require_finite(b, "rbf_grad1 b");
    spec.validate();
    const double h = spec.bandwidth_sq, d = a - b;
    return -2.0 * d / h * std::exp(-d * d / h);
}

/// d/db k(a,b)
inline double rbf_grad2(double a, double b, const KernelSpec& spec) {
    return -rbf_grad1(a, b, spec);
}

/// d^2/(da db) k(a,b)
inline double rbf_cross(double a, double b, const KernelSpec& spec) {
    require_finite(a, "rbf_cross a");
    require_finite(b, "rbf_cross b");
    spec.validate();
    const double h = spec.bandwidth_sq, d = a - b;
    return (2.0 / h - 4.0 * d * d / (h * h)) * std::exp(-d * d / h);
}

namespace detail {

// Lower-middle median of a scratch vector (destroyed).  Returns 1.0 when the
// median is zero so that degenerate all-equal inputs still yield a usable kernel.
inline double median_or_one(std::vector<double>& d) {
    const std::size_t k = (d.size() - 1) / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    const double m = d[k];
    return m > 0.0 ? m : 1.0;
}

}  // namespace detail

/// Bandwidth from the median of pairwise squared distances over distinct pairs.
inline KernelSpec median_heuristic(const Eigen::Ref<const Vector>& values) {
    require(values.size() >= 2, "median_heuristic: need at least 2 values");
    require_finite(values, "median_heuristic values");
    const Eigen::Index n = values.size();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double diff = values[i] - values[j];
            d.push_back(diff * diff);
        }
    return KernelSpec{KernelFamily::RBF, detail::median_or_one(d)};
}

inline KernelSpec median_heuristic(const std::vector<double>& values) {
    return median_heuristic(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
}

/// Ambient-space variant: median of pairwise squared Euclidean distances
/// between the rows of X.  Used for the multivariate kernels in KSD, KE and GE.
inline KernelSpec median_heuristic_ambient(const Eigen::Ref<const Matrix>& X) {
    require(X.rows() >= 2, "median_heuristic_ambient: need at least 2 rows");
    require_finite(X, "median_heuristic_ambient rows");
    const Eigen::Index n = X.rows();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            d.push_back((X.row(i) - X.row(j)).squaredNorm());
    return KernelSpec{KernelFamily::RBF, detail::median_or_one(d)};
}

/// N x N matrix of squared Euclidean distances between rows.
inline Matrix pairwise_sqdist(const Eigen::Ref<const Matrix>& X) {
    const Eigen::Index n = X.rows();
    const Vector sq = X.rowwise().squaredNorm();
    Matrix d = sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * (X * X.transpose());
    return d.cwiseMax(0.0);
}

/// Gram matrix of the multivariate RBF exp(-||x_i - x_j||^2 / h).
inline Matrix rbf_gram(const Eigen::Ref<const Matrix>& X, const KernelSpec& spec) {
    spec.validate();
    return (-pairwise_sqdist(X) / spec.bandwidth_sq).array().exp();
}

}  // namespace sksd
