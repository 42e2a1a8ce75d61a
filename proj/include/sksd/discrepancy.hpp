#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sksd/kernel.hpp"
#include "sksd/models.hpp"

namespace sksd {

/// Paired slice directions: row i of r_dirs projects the score, row i of
/// g_dirs projects the input.  All rows unit norm.
struct SliceSet {
    Matrix r_dirs;  // m x D
    Matrix g_dirs;  // m x D

    Eigen::Index count() const { return r_dirs.rows(); }
    Eigen::Index dim() const { return r_dirs.cols(); }

    void validate(double tol = 1e-8) const {
        require(r_dirs.rows() >= 1, "SliceSet: need at least one slice");
        require(r_dirs.rows() == g_dirs.rows() && r_dirs.cols() == g_dirs.cols(),
                "SliceSet: r and g shapes differ");
        for (Eigen::Index i = 0; i < r_dirs.rows(); ++i) {
            require(std::abs(r_dirs.row(i).norm() - 1.0) <= tol, "SliceSet: r row not unit norm");
            require(std::abs(g_dirs.row(i).norm() - 1.0) <= tol, "SliceSet: g row not unit norm");
        }
    }

    json to_json() const {
        json jr = json::array(), jg = json::array();
        for (Eigen::Index i = 0; i < r_dirs.rows(); ++i) {
            jr.push_back(std::vector<double>(r_dirs.row(i).begin(), r_dirs.row(i).end()));
            jg.push_back(std::vector<double>(g_dirs.row(i).begin(), g_dirs.row(i).end()));
        }
        return {{"r", jr}, {"g", jg}};
    }

    static SliceSet from_json(const json& j) {
        SliceSet s{matrix_from_json(j.at("r")), matrix_from_json(j.at("g"))};
        s.validate();
        return s;
    }

    /// Canonical basis paired with itself (the fixed-basis test protocol).
    static SliceSet identity(int dim) {
        return {Matrix::Identity(dim, dim), Matrix::Identity(dim, dim)};
    }
};

/// Materialized pairwise Gram of a Stein kernel.  The diagonal is excluded by
/// the U-statistic and the bootstrap, and is stored as zero.
struct PairwiseStat {
    Matrix gram;

    PairwiseStat(Matrix g) : gram(std::move(g)) {  // NOLINT: intentional implicit wrap
        require(gram.rows() == gram.cols() && gram.rows() >= 2, "PairwiseStat: gram must be square, N >= 2");
        require_finite(gram, "PairwiseStat gram");
        require((gram - gram.transpose()).cwiseAbs().maxCoeff() <=
                    1e-10 * (1.0 + gram.cwiseAbs().maxCoeff()),
                "PairwiseStat: gram must be symmetric");
    }

    Eigen::Index n() const { return gram.rows(); }
};

// ---------------------------------------------------------------------------
// Pair kernels
// ---------------------------------------------------------------------------

/// KSD pair kernel u_p(x, y) with the D-dimensional RBF k(x,y) = exp(-||x-y||^2/h):
///   s_p(x)^T k s_p(y) + s_p(x)^T grad_y k + s_p(y)^T grad_x k + tr(grad_x grad_y k)
inline double ksd_u_kernel(const Vector& x, const Vector& y, const ScoreModel& model,
                           const KernelSpec& spec) {
    require(x.size() == y.size() && x.size() == model.dim(), "ksd_u_kernel: dimension mismatch");
    require_finite(x, "ksd_u_kernel x");
    require_finite(y, "ksd_u_kernel y");
    spec.validate();
    const double h = spec.bandwidth_sq;
    const Vector d = x - y;
    const double sq = d.squaredNorm();
    const double k = std::exp(-sq / h);
    const Vector sx = model.score(x), sy = model.score(y);
    const double D = static_cast<double>(x.size());
    // grad_y k = (2/h) d k ; grad_x k = -(2/h) d k ; tr cross = (2D/h - 4 sq/h^2) k
    return sx.dot(sy) * k + (2.0 / h) * sx.dot(d) * k - (2.0 / h) * sy.dot(d) * k +
           (2.0 * D / h - 4.0 * sq / (h * h)) * k;
}

/// SKSD pair kernel mu_{p,r,g}(x,y) on projections a = x^T g, b = y^T g with
/// projected scores s_x = s_p(x)^T r, s_y = s_p(y)^T r:
///   s_x k(a,b) s_y + (r^T g) s_y dk/da + (r^T g) s_x dk/db + (r^T g)^2 d2k/dadb
inline double sksd_u_kernel(const Vector& x, const Vector& y, const ScoreModel& model,
                            const Vector& r, const Vector& g, const KernelSpec& spec) {
    require(std::abs(r.norm() - 1.0) <= 1e-6, "sksd_u_kernel: r must be unit norm");
    require(std::abs(g.norm() - 1.0) <= 1e-6, "sksd_u_kernel: g must be unit norm");
    const double a = x.dot(g), b = y.dot(g);
    const double sx = model.score(x).dot(r), sy = model.score(y).dot(r);
    const double c = r.dot(g);
    return sx * rbf_eval(a, b, spec) * sy + c * sy * rbf_grad1(a, b, spec) +
           c * sx * rbf_grad2(a, b, spec) + c * c * rbf_cross(a, b, spec);
}

// ---------------------------------------------------------------------------
// U-statistics and Gram assembly
// ---------------------------------------------------------------------------

/// (1 / (N (N-1))) * sum_{i != j} pair_fn(x_i, x_j); diagonal excluded.
template <typename PairFn>
double u_statistic(PairFn&& pair_fn, const Matrix& samples) {
    const Eigen::Index n = samples.rows();
    require(n >= 2, "u_statistic: need at least 2 samples");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            acc += pair_fn(Vector(samples.row(i)), Vector(samples.row(j)));
        }
    return acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

inline double u_statistic_from_gram(const Matrix& gram) {
    const Eigen::Index n = gram.rows();
    require(n >= 2, "u_statistic_from_gram: need at least 2 samples");
    return (gram.sum() - gram.diagonal().sum()) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Materializes the pairwise Gram of a symmetric pair kernel (zero diagonal).
template <typename PairFn>
Matrix assemble_gram(PairFn&& pair_fn, const Matrix& samples) {
    const Eigen::Index n = samples.rows();
    require(n >= 2, "assemble_gram: need at least 2 samples");
    Matrix G = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = pair_fn(Vector(samples.row(i)), Vector(samples.row(j)));
            G(i, j) = v;
            G(j, i) = v;
        }
    return G;
}

namespace detail {

/// mu Gram for one slice pair from precomputed projections t = X g and
/// projected scores s = scores r.  Vectorized; zero diagonal.
inline Matrix sksd_gram_projected(const Vector& t, const Vector& s, double c, const KernelSpec& spec) {
    spec.validate();
    const double h = spec.bandwidth_sq;
    const Eigen::Index n = t.size();
    const Matrix u = t.replicate(1, n) - t.transpose().replicate(n, 1);
    const Matrix k = (-u.array().square() / h).exp();
    const Matrix ka = (-2.0 / h) * u.array() * k.array();  // dk/da; dk/db = -ka
    const Matrix kab = (2.0 / h - (4.0 / (h * h)) * u.array().square()) * k.array();
    Matrix G = (s * s.transpose()).array() * k.array()
             + c * (ka.array().rowwise() * s.transpose().array())   // s_y * dk/da
             - c * (ka.array().colwise() * s.array())               // s_x * dk/db
             + (c * c) * kab.array();
    G.diagonal().setZero();
    return G;
}

}  // namespace detail

/// Gram of mu for one (r, g) pair over all sample pairs.
inline Matrix sksd_gram(const Matrix& samples, const Matrix& scores, const Vector& r, const Vector& g,
                        const KernelSpec& spec) {
    const Vector t = samples * g;
    const Vector s = scores * r;
    return detail::sksd_gram_projected(t, s, r.dot(g), spec);
}

/// Gram of Sum_i mu_{p, r_i, g_i} with per-slice median-heuristic bandwidths
/// computed on the projections X g_i.  This is the pairwise statistic the
/// goodness-of-fit bootstrap re-weights.
inline Matrix sksd_summed_gram(const Matrix& samples, const ScoreModel& model, const SliceSet& slices) {
    slices.validate();
    require(samples.cols() == slices.dim(), "sksd_summed_gram: dimension mismatch");
    const Matrix scores = model.score_matrix(samples);
    Matrix G = Matrix::Zero(samples.rows(), samples.rows());
    for (Eigen::Index i = 0; i < slices.count(); ++i) {
        const Vector g = slices.g_dirs.row(i).transpose();
        const Vector r = slices.r_dirs.row(i).transpose();
        const Vector t = samples * g;
        const KernelSpec spec = median_heuristic(t);
        G += detail::sksd_gram_projected(t, scores * r, r.dot(g), spec);
    }
    return G;
}

/// KSD Gram with a single ambient median-heuristic bandwidth.
inline Matrix ksd_gram(const Matrix& samples, const ScoreModel& model) {
    const Eigen::Index n = samples.rows();
    require(n >= 2, "ksd_gram: need at least 2 samples");
    const KernelSpec spec = median_heuristic_ambient(samples);
    const double h = spec.bandwidth_sq;
    const double D = static_cast<double>(samples.cols());
    const Matrix scores = model.score_matrix(samples);
    const Matrix sq = pairwise_sqdist(samples);
    const Matrix k = (-sq.array() / h).exp();
    const Matrix sdot = scores * scores.transpose();
    // sxd_ij = s_p(x_i)^T (x_i - x_j); syd_ij = s_p(x_j)^T (x_j - x_i)
    const Vector sx_self = (scores.array() * samples.array()).rowwise().sum();
    const Matrix sxd = sx_self.replicate(1, n) - scores * samples.transpose();
    const Matrix syd = sx_self.transpose().replicate(n, 1) - samples * scores.transpose();
    Matrix G = (sdot.array() + (2.0 / h) * sxd.array() + (2.0 / h) * syd.array() +
                (2.0 * D / h - (4.0 / (h * h)) * sq.array())) *
               k.array();
    G.diagonal().setZero();
    return G;
}

/// SKSD-g statistic: sum over slice pairs of the mu U-statistic.
inline double sksd_g_statistic(const Matrix& samples, const ScoreModel& model, const SliceSet& slices) {
    return u_statistic_from_gram(sksd_summed_gram(samples, model, slices));
}

/// Monte-Carlo projected Stein discrepancy along r with unit test-function
/// coefficient: (1/N) sum_i (delta_i^T r)^2, rows of score_diffs being
/// delta_i = s_p(x_i) - s_q(x_i).
inline double psd_value(const Matrix& score_diffs, const Vector& r) {
    require(score_diffs.cols() == r.size(), "psd_value: dimension mismatch");
    return (score_diffs * r).squaredNorm() / static_cast<double>(score_diffs.rows());
}

}  // namespace sksd
