#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "sksd/discrepancy.hpp"
#include "sksd/kernel.hpp"
#include "sksd/models.hpp"

namespace sksd {

enum class FieldKind { Exact, KE, GE };

inline const char* field_kind_name(FieldKind k) {
    switch (k) {
        case FieldKind::Exact: return "ex";
        case FieldKind::KE: return "ke";
        case FieldKind::GE: return "ge";
    }
    return "?";
}

inline FieldKind field_kind_from_name(const std::string& s) {
    if (s == "ex") return FieldKind::Exact;
    if (s == "ke") return FieldKind::KE;
    if (s == "ge") return FieldKind::GE;
    throw std::invalid_argument("unknown estimator kind '" + s + "' (expected ex|ke|ge)");
}

/// Ridge-regularized Stein gradient estimator: solves
///   (K + eta I) S_hat = -<grad, K>,   <grad,K>_{i,d} = sum_j dk(x_i,x_j)/dx_{j,d}
/// for the scores of the sampling distribution at the sample points.
inline Matrix stein_gradient_estimate(const Matrix& samples, const KernelSpec& spec, double eta) {
    const Eigen::Index n = samples.rows();
    require(n >= 2, "stein_gradient_estimate: need at least 2 samples");
    require(eta > 0.0, "stein_gradient_estimate: ridge must be positive");
    spec.validate();
    const double h = spec.bandwidth_sq;
    const Matrix K = rbf_gram(samples, spec);
    // dk(x_i,x_j)/dx_{j,d} = (2/h)(x_{i,d} - x_{j,d}) K_ij
    const Matrix gradK = (2.0 / h) * (K.rowwise().sum().asDiagonal() * samples - K * samples);
    Matrix reg = K;
    reg.diagonal().array() += eta;
    const Matrix S = Eigen::LDLT<Matrix>(reg).solve(-gradK);
    const double resid = (reg * S + gradK).norm();
    if (!(resid <= 1e-8 * gradK.norm()))
        throw std::runtime_error("stein_gradient_estimate: linear system solve failed after ridging");
    return S;
}

/// Bandwidth scale for the GE kernel relative to the ambient median heuristic.
/// The ridge eta = 1e-3 regularizes very weakly, so the kernel itself must be
/// smooth enough to control variance; calibrated against the analytic Gaussian
/// score (RMSE ~0.22 at N=500, D=5 versus ~1.5 with the unscaled median).
inline constexpr double kGeBandwidthScale = 32.0;

/// The score-difference field delta(x) = s_p(x) - s_q(x) and its spatial
/// Jacobian, backed by one of three estimators:
///   Exact  - both analytic scores (q known)
///   KE     - kernel smoothing of the Stein-identity integrand (q via samples)
///   GE     - Stein gradient estimate of s_q (q via samples)
class ScoreDiffField {
public:
    FieldKind kind() const { return kind_; }
    const Matrix& support_points() const { return support_; }
    /// Cached rows delta_i = delta(x_i) at the support points.
    const Matrix& delta() const { return delta_; }
    Eigen::Index size() const { return support_.rows(); }
    Eigen::Index dim() const { return support_.cols(); }

    static ScoreDiffField exact(const Matrix& samples, ModelPtr p, ModelPtr q) {
        require(p && q, "exact field: both models required");
        require(p->dim() == q->dim() && samples.cols() == p->dim(), "exact field: dimension mismatch");
        ScoreDiffField f;
        f.kind_ = FieldKind::Exact;
        f.support_ = samples;
        f.p_ = std::move(p);
        f.q_ = std::move(q);
        f.delta_ = f.p_->score_matrix(samples) - f.q_->score_matrix(samples);
        require_finite(f.delta_, "exact field delta");
        return f;
    }

    static ScoreDiffField kernel_smoothed(const Matrix& samples, ModelPtr p,
                                          std::optional<KernelSpec> spec = std::nullopt) {
        require(p != nullptr, "KE field: model p required");
        // the median heuristic needs a pair; a caller-provided bandwidth does not
        require(samples.rows() >= (spec ? 1 : 2), "KE field: too few samples");
        ScoreDiffField f;
        f.kind_ = FieldKind::KE;
        f.support_ = samples;
        f.p_ = std::move(p);
        f.spec_ = spec ? *spec : median_heuristic_ambient(samples);
        f.p_scores_ = f.p_->score_matrix(samples);
        f.delta_.resize(samples.rows(), samples.cols());
        for (Eigen::Index i = 0; i < samples.rows(); ++i)
            f.delta_.row(i) = f.ke_evaluate(samples.row(i).transpose()).transpose();
        require_finite(f.delta_, "KE field delta");
        return f;
    }

    static ScoreDiffField gradient_estimated(const Matrix& samples, ModelPtr p,
                                             std::optional<KernelSpec> spec = std::nullopt,
                                             double eta = 1e-3) {
        require(p != nullptr, "GE field: model p required");
        ScoreDiffField f;
        f.kind_ = FieldKind::GE;
        f.support_ = samples;
        f.p_ = std::move(p);
        KernelSpec ge_spec;
        if (spec) {
            ge_spec = *spec;
        } else {
            ge_spec = median_heuristic_ambient(samples);
            ge_spec.bandwidth_sq *= kGeBandwidthScale;
        }
        f.spec_ = median_heuristic_ambient(samples);  // smoothing scale for Jacobians
        f.delta_ = f.p_->score_matrix(samples) - stein_gradient_estimate(samples, ge_spec, eta);
        require_finite(f.delta_, "GE field delta");
        return f;
    }

    /// Off-sample evaluation (Exact and KE).
    Vector evaluate(const Vector& y) const {
        switch (kind_) {
            case FieldKind::Exact: return p_->score(y) - q_->score(y);
            case FieldKind::KE: return ke_evaluate(y);
            case FieldKind::GE:
                throw std::logic_error("GE field has no off-sample evaluator");
        }
        throw std::logic_error("unreachable");
    }

    /// J_i = grad_x delta(x) at each support point, J(a,b) = d delta_a / d x_b.
    const std::vector<Matrix>& jacobians() const {
        if (jac_.empty()) {
            jac_.reserve(static_cast<std::size_t>(support_.rows()));
            for (Eigen::Index i = 0; i < support_.rows(); ++i)
                jac_.push_back(jacobian_at(support_.row(i).transpose()));
        }
        return jac_;
    }

    Matrix jacobian_at(const Vector& y) const {
        switch (kind_) {
            case FieldKind::Exact:
                if (p_->has_score_jacobian() && q_->has_score_jacobian())
                    return p_->score_jacobian(y) - q_->score_jacobian(y);
                return fd_jacobian(y);
            case FieldKind::KE: return ke_jacobian(y);
            case FieldKind::GE: return nw_jacobian(y);
        }
        throw std::logic_error("unreachable");
    }

private:
    ScoreDiffField() = default;

    Vector ke_evaluate(const Vector& y) const {
        // (1/N) sum_i [ s_p(x_i) k(x_i,y) + grad_{x_i} k(x_i,y) ],
        // grad_x k(x,y) = -(2/h)(x - y) k
        const double h = spec_.bandwidth_sq;
        const Matrix diff = support_.rowwise() - y.transpose();
        const Vector k = (-diff.rowwise().squaredNorm() / h).array().exp();
        const Vector out = p_scores_.transpose() * k - (2.0 / h) * (diff.transpose() * k);
        return out / static_cast<double>(support_.rows());
    }

    Matrix ke_jacobian(const Vector& y) const {
        // d/dy of ke_evaluate: (1/N) sum_i k_i [ (2/h) s_i (x_i-y)^T + (2/h) I
        //                                        - (4/h^2) (x_i-y)(x_i-y)^T ]
        const double h = spec_.bandwidth_sq;
        const Eigen::Index n = support_.rows(), D = support_.cols();
        const Matrix diff = support_.rowwise() - y.transpose();
        const Vector k = (-diff.rowwise().squaredNorm() / h).array().exp();
        const Matrix wd = diff.array().colwise() * k.array();
        Matrix J = (2.0 / h) * (p_scores_.transpose() * wd) + (2.0 / h) * k.sum() * Matrix::Identity(D, D) -
                   (4.0 / (h * h)) * (wd.transpose() * diff);
        return J / static_cast<double>(n);
    }

    // Nadaraya-Watson smoothing of the cached delta values; the GE estimator
    // itself yields no derivative information.
    Matrix nw_jacobian(const Vector& y) const {
        const double h = spec_.bandwidth_sq;
        const Matrix diff = support_.rowwise() - y.transpose();
        const Vector w = (-diff.rowwise().squaredNorm() / h).array().exp();
        const double wsum = w.sum();
        const Vector m = delta_.transpose() * w / wsum;
        // grad_y w_i = (2/h)(x_i - y) w_i
        const Matrix gw = (2.0 / h) * (diff.array().colwise() * w.array());
        const Matrix centered = delta_.rowwise() - m.transpose();
        return (centered.transpose() * gw) / wsum;
    }

    Matrix fd_jacobian(const Vector& y) const {
        const double step = 1e-4 * (1.0 + y.norm());
        const Eigen::Index D = y.size();
        Matrix J(D, D);
        for (Eigen::Index d = 0; d < D; ++d) {
            Vector yp = y, ym = y;
            yp[d] += step;
            ym[d] -= step;
            J.col(d) = (evaluate(yp) - evaluate(ym)) / (2.0 * step);
        }
        return J;
    }

    FieldKind kind_ = FieldKind::Exact;
    Matrix support_;
    Matrix delta_;
    ModelPtr p_, q_;
    Matrix p_scores_;  // KE: cached s_p at support
    KernelSpec spec_;  // KE: smoothing kernel; GE: Jacobian smoothing kernel
    mutable std::vector<Matrix> jac_;
};

inline ScoreDiffField exact_diff(const Matrix& samples, ModelPtr p, ModelPtr q) {
    return ScoreDiffField::exact(samples, std::move(p), std::move(q));
}

inline ScoreDiffField ke_diff(const Matrix& samples, ModelPtr p,
                              std::optional<KernelSpec> spec = std::nullopt) {
    return ScoreDiffField::kernel_smoothed(samples, std::move(p), spec);
}

inline ScoreDiffField ge_diff(const Matrix& samples, ModelPtr p,
                              std::optional<KernelSpec> spec = std::nullopt, double eta = 1e-3) {
    return ScoreDiffField::gradient_estimated(samples, std::move(p), spec, eta);
}

inline const std::vector<Matrix>& jacobian_at_support(const ScoreDiffField& field) {
    return field.jacobians();
}

}  // namespace sksd
