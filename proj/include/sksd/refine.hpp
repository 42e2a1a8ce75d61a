#pragma once

#include <numeric>
#include <vector>

#include "sksd/discrepancy.hpp"
#include "sksd/score_field.hpp"

namespace sksd {

/// Gradient-based slice refinement ("GO"): projected first-order ascent of the
/// minibatch SKSD-g U-statistic over the unit sphere.
struct GoConfig {
    int epochs = 50;
    int batch_size = 100;
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    bool optimize_r = false;
    std::uint64_t seed = 0;

    void validate() const {
        require(epochs >= 0, "GoConfig: epochs must be nonnegative");
        require(batch_size >= 2, "GoConfig: batch_size must be at least 2");
        require(step_size > 0.0, "GoConfig: step_size must be positive");
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                "GoConfig: moment decays must lie in [0, 1)");
    }
};

struct SliceGradients {
    Vector grad_r;
    Vector grad_g;
};

namespace detail {

struct AdamState {
    Vector m, v;
    int t = 0;

    explicit AdamState(Eigen::Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}

    Vector step(const Vector& grad, double lr, double b1, double b2, double eps = 1e-8) {
        ++t;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v.array().matrix() + (1.0 - b2) * grad.array().square().matrix();
        const Vector mh = m / (1.0 - std::pow(b1, t));
        const Vector vh = v / (1.0 - std::pow(b2, t));
        return lr * (mh.array() / (vh.array().sqrt() + eps)).matrix();
    }
};

}  // namespace detail

/// Analytic gradient of the minibatch SKSD U-statistic of mu_{p,r,g} with
/// respect to r and g, at a fixed kernel bandwidth.  scores holds s_p rowwise
/// for the minibatch.
inline SliceGradients sksd_slice_gradient(const Matrix& batch, const Matrix& scores, const Vector& r,
                                          const Vector& g, const KernelSpec& spec) {
    const Eigen::Index n = batch.rows();
    require(n >= 2, "sksd_slice_gradient: need at least 2 samples");
    spec.validate();
    const double h = spec.bandwidth_sq;
    const double c = r.dot(g);
    const Vector t = batch * g;
    const Vector s = scores * r;

    const Matrix u = t.replicate(1, n) - t.transpose().replicate(n, 1);
    const Matrix phi = (-u.array().square() / h).exp();
    const Matrix phi1 = (-2.0 / h) * u.array() * phi.array();
    const Matrix phi2 = ((4.0 / (h * h)) * u.array().square() - 2.0 / h) * phi.array();
    const Matrix phi3 =
        ((12.0 / (h * h)) * u.array() - (8.0 / (h * h * h)) * u.array().cube()) * phi.array();

    // k = phi, dk/da = phi1, dk/db = -phi1, d2k/dada = phi2, d2k/dbdb = phi2,
    // d2k/dadb = -phi2, d3k/dadadb = -phi3, d3k/dadbdb = phi3
    auto zero_diag = [](Matrix m) {
        m.diagonal().setZero();
        return m;
    };
    const Matrix k = zero_diag(phi);
    const Matrix ka = zero_diag(phi1);
    const Matrix kaa = zero_diag(phi2);
    const Matrix kaab = zero_diag(-phi3);

    // d mu / d s_x = k s_y + c kb ; d mu / d s_y = k s_x + c ka ; kb = -ka
    const Vector wi = (k.array().rowwise() * s.transpose().array() - c * ka.array()).rowwise().sum();
    const Vector wj = (k.array().colwise() * s.array() + c * ka.array()).colwise().sum().transpose();
    // d mu / d c = s_y ka + s_x kb + 2 c kab
    const double gamma = ((ka.array().rowwise() * s.transpose().array()) -
                          (ka.array().colwise() * s.array()) - 2.0 * c * kaa.array())
                             .sum();
    Vector grad_r = scores.transpose() * (wi + wj) + gamma * g;

    // d mu / d a = s_x s_y ka + c s_y kaa + c s_x kab + c^2 kaab
    const Matrix dmu_da = (s * s.transpose()).array() * ka.array() +
                          c * (kaa.array().rowwise() * s.transpose().array()) -
                          c * (kaa.array().colwise() * s.array()) + (c * c) * kaab.array();
    // d mu / d b = -s_x s_y ka - c s_y kaa ... : mirror via u -> -u antisymmetry
    const Matrix dmu_db = -(s * s.transpose()).array() * ka.array() -
                          c * (kaa.array().rowwise() * s.transpose().array()) +
                          c * (kaa.array().colwise() * s.array()) - (c * c) * kaab.array();
    const Vector vi = dmu_da.rowwise().sum();
    const Vector vj = dmu_db.colwise().sum().transpose();
    Vector grad_g = batch.transpose() * (vi + vj) + gamma * r;

    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    return {grad_r * scale, grad_g * scale};
}

inline SliceGradients sksd_slice_gradient(const Matrix& batch, const ScoreModel& model_p, const Vector& r,
                                          const Vector& g, const KernelSpec& spec) {
    return sksd_slice_gradient(batch, model_p.score_matrix(batch), r, g, spec);
}

/// Adaptive-moment ascent of the minibatch SKSD-g statistic over g rows (and r
/// rows when cfg.optimize_r), renormalizing every updated row to unit norm.
/// Bandwidths are recomputed per minibatch from the current projections.
inline SliceSet refine_slices(const Matrix& samples, const ScoreModel& model_p, const SliceSet& slices,
                              const GoConfig& cfg) {
    slices.validate();
    cfg.validate();
    SliceSet out = slices;
    if (cfg.epochs == 0) return out;

    const Eigen::Index n = samples.rows(), m = slices.count(), D = slices.dim();
    const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);
    std::vector<detail::AdamState> g_state(m, detail::AdamState(D));
    std::vector<detail::AdamState> r_state(m, detail::AdamState(D));
    Rng rng(cfg.seed);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates
        for (Eigen::Index i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)))]);
        for (Eigen::Index start = 0; start + bs <= n; start += bs) {
            Matrix batch(bs, D);
            for (Eigen::Index i = 0; i < bs; ++i)
                batch.row(i) = samples.row(order[static_cast<std::size_t>(start + i)]);
            const Matrix scores = model_p.score_matrix(batch);
            for (Eigen::Index si = 0; si < m; ++si) {
                const Vector r = out.r_dirs.row(si).transpose();
                const Vector g = out.g_dirs.row(si).transpose();
                const KernelSpec spec = median_heuristic(Vector(batch * g));
                const SliceGradients grads = sksd_slice_gradient(batch, scores, r, g, spec);
                Vector g_new = g + g_state[static_cast<std::size_t>(si)].step(grads.grad_g, cfg.step_size,
                                                                              cfg.beta1, cfg.beta2);
                out.g_dirs.row(si) = (g_new / g_new.norm()).transpose();
                if (cfg.optimize_r) {
                    Vector r_new = r + r_state[static_cast<std::size_t>(si)].step(
                                           grads.grad_r, cfg.step_size, cfg.beta1, cfg.beta2);
                    out.r_dirs.row(si) = (r_new / r_new.norm()).transpose();
                }
            }
        }
    }
    return out;
}

}  // namespace sksd
