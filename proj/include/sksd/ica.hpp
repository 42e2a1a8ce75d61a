#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sksd/active_slices.hpp"
#include "sksd/discrepancy.hpp"
#include "sksd/models.hpp"
#include "sksd/refine.hpp"

namespace sksd {

/// SKSD-g statistic of the batch under the ICA model with mixing matrix W.
inline double ica_loss(const Matrix& batch, const Matrix& W, const SliceSet& slices, double nu) {
    require(batch.rows() >= 2, "ica_loss: need at least 2 samples");
    const IcaModel model(W, nu);
    return sksd_g_statistic(batch, model, slices);
}

/// Analytic gradient of ica_loss with respect to W via the chain rule through
/// s_p(x) = W^-T s_z(W^-1 x).  Per slice, with A = W^-1, z_m = A x_m,
/// u_m = s_z(z_m) and the U-statistic weight omega_m of the projected score:
///   grad_W = -sum_m omega_m [ (A^T J_z(z_m) A r) z_m^T + (A^T u_m)(A r)^T ].
inline Matrix ica_loss_grad_W(const Matrix& batch, const Matrix& W, const SliceSet& slices, double nu) {
    const Eigen::Index B = batch.rows();
    require(B >= 2, "ica_loss_grad_W: need at least 2 samples");
    slices.validate();
    const IcaModel model(W, nu);
    const StudentTModel base(static_cast<int>(W.rows()), nu, /*joint=*/true);
    const Matrix& A = model.W_inv();
    const Matrix Z = batch * A.transpose();
    const Matrix U = base.score_matrix(Z);
    const Matrix scores = U * A;  // s_p rowwise

    Matrix grad = Matrix::Zero(W.rows(), W.cols());
    const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(B - 1));
    for (Eigen::Index si = 0; si < slices.count(); ++si) {
        const Vector r = slices.r_dirs.row(si).transpose();
        const Vector g = slices.g_dirs.row(si).transpose();
        const double c = r.dot(g);
        const Vector t = batch * g;
        const KernelSpec spec = median_heuristic(t);
        const double h = spec.bandwidth_sq;
        const Vector s = scores * r;
        const Eigen::Index n = B;

        Eigen::ArrayXXd u = (t.replicate(1, n) - t.transpose().replicate(n, 1)).array();
        Eigen::ArrayXXd k = (-u.square() / h).exp();
        Eigen::ArrayXXd ka = (-2.0 / h) * u * k;
        for (Eigen::Index i = 0; i < n; ++i) k(i, i) = ka(i, i) = 0.0;

        // omega_m = sum_{j!=m} dmu(m,j)/ds_x + sum_{i!=m} dmu(i,m)/ds_y
        //         = sum_j (k s_j - c ka) + sum_i (k s_i + c ka)
        const Vector om = ((k.rowwise() * s.transpose().array()) - c * ka).rowwise().sum().matrix() +
                          ((k.colwise() * s.array()) + c * ka).colwise().sum().matrix().transpose();

        const Vector Ar = A * r;
        Matrix JAr(n, W.rows());
        for (Eigen::Index i = 0; i < n; ++i)
            JAr.row(i) = base.score_jacobian_vp(Z.row(i).transpose(), Ar).transpose();
        grad.noalias() -= A.transpose() * ((JAr.array().colwise() * om.array()).matrix().transpose() * Z);
        grad.noalias() -= (A.transpose() * (U.array().colwise() * om.array()).matrix().colwise().sum().transpose()) *
                          Ar.transpose();
    }
    return grad * scale;
}

struct IcaTrainConfig {
    int iterations = 15000;
    int batch_size = 100;
    int refresh_every = 200;   // active slices recomputed at each epoch start
    int eval_every = 200;      // test-NLL checkpoints
    int slice_sample = 3000;   // training points used for the score-difference field
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double nu = 5.0;
    FieldKind estimator = FieldKind::KE;
    ModelPtr generator;        // Exact estimator needs the data-generating model
    std::uint64_t seed = 0;
};

struct IcaTrainResult {
    Matrix W;
    std::vector<std::pair<int, double>> nll_curve;  // (iteration, test NLL)
};

/// Mean negative log-likelihood, including the log|det W| term.
inline double ica_test_nll(const Matrix& data, const Matrix& W, double nu) {
    const IcaModel model(W, nu);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) acc -= model.logp(data.row(i).transpose());
    return acc / static_cast<double>(data.rows());
}

/// Random square matrix with condition number below dim.
inline Matrix well_conditioned_matrix(int dim, Rng& rng, int max_attempts = 10000) {
    for (int a = 0; a < max_attempts; ++a) {
        Matrix W = rng.normal_mat(dim, dim);
        Eigen::JacobiSVD<Matrix> svd(W);
        const double cond = svd.singularValues()(0) / svd.singularValues()(dim - 1);
        if (cond < static_cast<double>(dim)) return W;
    }
    throw std::runtime_error("well_conditioned_matrix: no acceptable draw");
}

inline Matrix ica_generate(const Matrix& W, double nu, Eigen::Index n, std::uint64_t seed) {
    return IcaModel(W, nu).sample(n, seed);
}

/// SKSD-g minimization over W with per-epoch active-slice refresh and
/// adversarial ascent on the g rows; O_r stays fixed within an epoch.
inline IcaTrainResult train_ica(const Matrix& train_data, const Matrix& test_data,
                                const IcaTrainConfig& cfg) {
    const Eigen::Index n = train_data.rows();
    const int D = static_cast<int>(train_data.cols());
    require(n >= cfg.batch_size && cfg.batch_size >= 2, "train_ica: batch size out of range");
    if (cfg.estimator == FieldKind::Exact)
        require(cfg.generator != nullptr, "train_ica: Exact estimator needs the generator model");

    Rng rng(derive_seed(cfg.seed, 0x1CA));
    Matrix W = well_conditioned_matrix(D, rng);

    IcaTrainResult result;
    result.nll_curve.emplace_back(0, ica_test_nll(test_data, W, cfg.nu));

    detail::AdamState w_state(static_cast<Eigen::Index>(D) * D);
    std::vector<detail::AdamState> g_state;
    SliceSet slices{Matrix::Identity(D, D), Matrix::Identity(D, D)};

    const double det_floor = 1e-12;
    for (int it = 0; it < cfg.iterations; ++it) {
        if (it % cfg.refresh_every == 0) {
            // slice refresh on a random training subset with the current model
            const Eigen::Index take = std::min<Eigen::Index>(cfg.slice_sample, n);
            Matrix sub(take, D);
            for (Eigen::Index i = 0; i < take; ++i)
                sub.row(i) = train_data.row(static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n))));
            ActiveSliceConfig acfg;
            acfg.estimator = cfg.estimator;
            acfg.q = cfg.generator;
            acfg.seed = derive_seed(cfg.seed, 0xE0 + static_cast<std::uint64_t>(it));
            slices = active_slice_algorithm(sub, std::make_shared<IcaModel>(W, cfg.nu), acfg);
            g_state.assign(static_cast<std::size_t>(slices.count()), detail::AdamState(D));
        }

        Matrix batch(cfg.batch_size, D);
        for (int i = 0; i < cfg.batch_size; ++i)
            batch.row(i) = train_data.row(static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n))));

        // adversarial ascent on g rows, O_r fixed
        const IcaModel model(W, cfg.nu);
        const Matrix scores = model.score_matrix(batch);
        for (Eigen::Index si = 0; si < slices.count(); ++si) {
            const Vector r = slices.r_dirs.row(si).transpose();
            const Vector g = slices.g_dirs.row(si).transpose();
            const KernelSpec spec = median_heuristic(Vector(batch * g));
            const SliceGradients grads = sksd_slice_gradient(batch, scores, r, g, spec);
            Vector g_new = g + g_state[static_cast<std::size_t>(si)].step(grads.grad_g, cfg.step_size,
                                                                          cfg.beta1, cfg.beta2);
            slices.g_dirs.row(si) = (g_new / g_new.norm()).transpose();
        }

        // descent on W; reject steps that would collapse the determinant
        const Matrix grad = ica_loss_grad_W(batch, W, slices, cfg.nu);
        const Vector step = w_state.step(Eigen::Map<const Vector>(grad.data(), grad.size()), cfg.step_size,
                                         cfg.beta1, cfg.beta2);
        Matrix W_new = W - Eigen::Map<const Matrix>(step.data(), D, D);
        const double scale = W_new.norm() / std::sqrt(static_cast<double>(D));
        const double logdet = Eigen::HouseholderQR<Matrix>(W_new).logAbsDeterminant();
        if (std::isfinite(logdet) && logdet > std::log(det_floor) + D * std::log(std::max(scale, 1e-300)))
            W = std::move(W_new);

        if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations)
            result.nll_curve.emplace_back(it + 1, ica_test_nll(test_data, W, cfg.nu));
    }
    result.W = std::move(W);
    return result;
}

}  // namespace sksd
