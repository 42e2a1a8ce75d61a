#pragma once

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sksd/refine.hpp"
#include "sksd/score_field.hpp"

namespace sksd {

/// Deterministic eigenvector sign: the largest-magnitude component (lowest
/// index on ties) is made positive.
inline Vector fix_eigvec_sign(Vector v) {
    Eigen::Index best = 0;
    double mag = -1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > mag) {
            mag = std::abs(v[i]);
            best = i;
        }
    }
    if (v[best] < 0.0) v = -v;
    return v;
}

/// Spectral decomposition of S = E_q[delta delta^T]; eigenvalues descending,
/// eigenvectors as columns with the deterministic sign convention.
struct SpectralSummary {
    Matrix S;
    Vector eigenvalues;
    Matrix eigenvectors;
};

namespace detail {

inline std::pair<Vector, Matrix> sym_eig_descending(const Matrix& S) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    const Eigen::Index D = S.rows();
    Vector vals(D);
    Matrix vecs(D, D);
    for (Eigen::Index i = 0; i < D; ++i) {
        vals[i] = es.eigenvalues()[D - 1 - i];
        vecs.col(i) = fix_eigvec_sign(es.eigenvectors().col(D - 1 - i));
    }
    return {vals, vecs};
}

}  // namespace detail

inline SpectralSummary compute_S(const ScoreDiffField& field) {
    require(field.size() >= 2, "compute_S: need at least 2 support points");
    require_finite(field.delta(), "compute_S delta");
    const Matrix& d = field.delta();
    const Matrix outer = d.transpose() * d / static_cast<double>(d.rows());
    Matrix S = 0.5 * (outer + outer.transpose());
    auto [vals, vecs] = detail::sym_eig_descending(S);
    return {std::move(S), std::move(vals), std::move(vecs)};
}

struct HrResult {
    Matrix H;
    double top_value;
    Vector top_vector;
};

/// H_r = (1/N) sum_i (J_i^T r)(J_i^T r)^T with J_i the field Jacobians; the
/// top eigenpair supplies the active slice g_r.
inline HrResult compute_H_r(const ScoreDiffField& field, const Vector& r) {
    const auto& jacs = field.jacobians();
    const Eigen::Index D = field.dim();
    Matrix H = Matrix::Zero(D, D);
    for (const Matrix& J : jacs) {
        const Vector jr = J.transpose() * r;
        H.noalias() += jr * jr.transpose();
    }
    H /= static_cast<double>(jacs.size());
    auto [vals, vecs] = detail::sym_eig_descending(H);
    return {std::move(H), vals[0], vecs.col(0)};
}

struct ActiveSliceConfig {
    FieldKind estimator = FieldKind::Exact;
    ModelPtr q;                      // Exact only
    std::optional<int> prune_m;      // keep top-m r slices; all D when absent
    double noise = 0.0;              // gamma; slices stay valid for any value
    double ge_eta = 1e-3;
    std::optional<GoConfig> refine;  // optional gradient refinement
    std::uint64_t seed = 0;
};

inline ScoreDiffField build_field(const Matrix& samples, ModelPtr p, const ActiveSliceConfig& cfg) {
    switch (cfg.estimator) {
        case FieldKind::Exact:
            require(cfg.q != nullptr, "active slices: Exact estimator needs the q model");
            return exact_diff(samples, std::move(p), cfg.q);
        case FieldKind::KE: return ke_diff(samples, std::move(p));
        case FieldKind::GE: return ge_diff(samples, std::move(p), std::nullopt, cfg.ge_eta);
    }
    throw std::logic_error("unreachable");
}

/// Spectral construction of a slice set:
///   r rows  = top-m eigenvectors of S (all D without pruning),
///   g rows  = top eigenvector of H_r per r (falling back to r when H_r
///             degenerates to zero, e.g. a constant field),
/// with optional Gaussian noise + renormalization on every slice and optional
/// gradient refinement of the result.
inline SliceSet active_slice_algorithm(const Matrix& samples, ModelPtr p, const ActiveSliceConfig& cfg) {
    const Eigen::Index D = samples.cols();
    const Eigen::Index m = cfg.prune_m ? *cfg.prune_m : D;
    require(m >= 1 && m <= D, "active slices: pruning count must lie in [1, D]");

    const ScoreDiffField field = build_field(samples, p, cfg);
    const SpectralSummary spectral = compute_S(field);

    Rng rng(derive_seed(cfg.seed, 0x51));
    auto noisify = [&](Vector v) {
        if (cfg.noise > 0.0) v += cfg.noise * rng.normal_vec(v.size());
        const double norm = v.norm();
        require(norm > 0.0, "active slices: degenerate zero slice");
        return Vector(v / norm);
    };

    SliceSet out{Matrix(m, D), Matrix(m, D)};
    for (Eigen::Index i = 0; i < m; ++i)
        out.r_dirs.row(i) = noisify(spectral.eigenvectors.col(i)).transpose();
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vector r = out.r_dirs.row(i).transpose();
        const HrResult hr = compute_H_r(field, r);
        const Vector g = hr.top_value > 1e-12 ? hr.top_vector : r;
        out.g_dirs.row(i) = noisify(g).transpose();
    }
    out.validate();

    if (cfg.refine) out = refine_slices(samples, *p, out, *cfg.refine);
    return out;
}

/// Eigenvector perturbation diagnostic for symmetric H, H_hat: the sign-
/// invariant distance between top eigenvectors against the Davis-Kahan style
/// bound 2^{3/2} ||H_hat - H||_op / (lambda_1 - lambda_2).  The bound is +inf
/// when the top eigenvalues of H coincide.
inline std::pair<double, double> eig_perturbation_bound(const Matrix& H, const Matrix& H_hat) {
    require(H.rows() == H.cols() && H_hat.rows() == H_hat.cols() && H.rows() == H_hat.rows(),
            "eig_perturbation_bound: shape mismatch");
    require((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-8, "eig_perturbation_bound: H not symmetric");
    require((H_hat - H_hat.transpose()).cwiseAbs().maxCoeff() <= 1e-8,
            "eig_perturbation_bound: H_hat not symmetric");

    auto [vals, vecs] = detail::sym_eig_descending(0.5 * (H + H.transpose()));
    auto [vals_hat, vecs_hat] = detail::sym_eig_descending(0.5 * (H_hat + H_hat.transpose()));
    const Vector g = vecs.col(0), g_hat = vecs_hat.col(0);
    const double dist = std::min((g - g_hat).norm(), (g + g_hat).norm());

    const double gap = vals[0] - vals[1];
    if (!(gap > 0.0)) return {dist, std::numeric_limits<double>::infinity()};
    const Matrix E = 0.5 * ((H_hat - H) + (H_hat - H).transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(E);
    const double op_norm = es.eigenvalues().cwiseAbs().maxCoeff();
    return {dist, 2.0 * std::sqrt(2.0) * op_norm / gap};
}

}  // namespace sksd
