#include <catch2/catch_amalgamated.hpp>

#include "sksd/score_field.hpp"

using namespace sksd;
using Catch::Approx;

TEST_CASE("exact field", "[score_field]") {
    SECTION("p = q gives the zero field") {
        const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(3));
        Rng rng(1);
        const Matrix X = rng.normal_mat(15, 3);
        const ScoreDiffField f = exact_diff(X, p, p);
        CHECK(f.delta().norm() == 0.0);
        for (const Matrix& J : f.jacobians()) CHECK(J.norm() == 0.0);
    }
    SECTION("diffusion pair concentrates on the first coordinate") {
        const int D = 4;
        Vector var = Vector::Ones(D);
        var[0] = 0.3;
        const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(D));
        const auto q = std::make_shared<GaussianModel>(Vector::Zero(D), var);
        Rng rng(2);
        const Matrix X = rng.normal_mat(10, D);
        const ScoreDiffField f = exact_diff(X, p, q);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            CHECK(f.delta()(i, 0) == Approx(-X(i, 0) + X(i, 0) / 0.3).epsilon(1e-12));
            CHECK(f.delta().row(i).tail(D - 1).norm() == 0.0);
        }
        // Jacobian has the single entry (1,1) = 1/0.3 - 1
        for (const Matrix& J : f.jacobians()) {
            CHECK(J(0, 0) == Approx(1.0 / 0.3 - 1.0).epsilon(1e-10));
            CHECK(J.norm() == Approx(std::abs(1.0 / 0.3 - 1.0)).epsilon(1e-10));
        }
    }
    SECTION("mean shift gives a constant field with zero Jacobians") {
        const int D = 3;
        Vector mu(D);
        mu << 1.0, -2.0, 0.5;
        const auto p = std::make_shared<GaussianModel>(mu, Vector::Ones(D));
        const auto q = std::make_shared<GaussianModel>(GaussianModel::standard(D));
        Rng rng(3);
        const Matrix X = rng.normal_mat(12, D);
        const ScoreDiffField f = exact_diff(X, p, q);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            CHECK((f.delta().row(i).transpose() - mu).norm() <= 1e-12);
        for (const Matrix& J : f.jacobians()) CHECK(J.norm() <= 1e-12);
    }
    SECTION("finite-difference Jacobian fallback matches the analytic path") {
        // RBM exposes an analytic Jacobian; compare against the generic
        // finite-difference route through a model wrapper that hides it.
        Rng rng(4);
        const auto rbm = std::make_shared<RbmModel>(0.4 * rng.normal_mat(3, 2), rng.normal_vec(3),
                                                    rng.normal_vec(2));
        struct Hidden final : ScoreModel {
            ModelPtr inner;
            explicit Hidden(ModelPtr m) : inner(std::move(m)) {}
            int dim() const override { return inner->dim(); }
            Vector score(const Vector& x) const override { return inner->score(x); }
            json to_json() const override { return inner->to_json(); }
        };
        const auto hidden = std::make_shared<Hidden>(rbm);
        const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(3));
        const Matrix X = rng.normal_mat(6, 3);
        const ScoreDiffField analytic = exact_diff(X, p, rbm);
        const ScoreDiffField fd = exact_diff(X, p, hidden);
        for (std::size_t i = 0; i < analytic.jacobians().size(); ++i)
            CHECK((analytic.jacobians()[i] - fd.jacobians()[i]).norm() <=
                  1e-6 * (1.0 + analytic.jacobians()[i].norm()));
    }
    SECTION("missing capability") {
        const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(2));
        CHECK_THROWS_AS(exact_diff(Matrix::Zero(3, 2), p, nullptr), std::invalid_argument);
    }
}

TEST_CASE("kernel smoothed field", "[score_field]") {
    const auto p1 = std::make_shared<GaussianModel>(GaussianModel::standard(1));

    SECTION("single support point evaluates to s_p there") {
        Matrix X(1, 1);
        X << 1.7;  // the kernel gradient vanishes at zero distance
        const ScoreDiffField f = ke_diff(X, p1, KernelSpec{KernelFamily::RBF, 1.0});
        CHECK(f.delta()(0, 0) == Approx(p1->score(X.row(0).transpose())[0]).epsilon(1e-12));
    }
    SECTION("consistency under p = q at N = 2000") {
        const Matrix X = p1->sample(2000, 31);
        const ScoreDiffField f = ke_diff(X, p1);
        CHECK(f.delta().cwiseAbs().mean() <= 0.1);
    }
    SECTION("evaluator agrees with cached rows at support points") {
        Rng rng(5);
        const auto p = std::make_shared<StudentTModel>(3, 5.0, false);
        const Matrix X = rng.normal_mat(30, 3);
        const ScoreDiffField f = ke_diff(X, p);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            CHECK((f.evaluate(X.row(i).transpose()) - f.delta().row(i).transpose()).norm() <=
                  1e-10 * (1.0 + f.delta().row(i).norm()));
    }
    SECTION("jacobian matches finite differences of the evaluator") {
        Rng rng(6);
        const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(3));
        const Matrix X = rng.normal_mat(25, 3);
        const ScoreDiffField f = ke_diff(X, p);
        const double step = 1e-5;
        for (int rep = 0; rep < 5; ++rep) {
            const Vector y = rng.normal_vec(3);
            Matrix fd(3, 3);
            for (int d = 0; d < 3; ++d) {
                Vector yp = y, ym = y;
                yp[d] += step;
                ym[d] -= step;
                fd.col(d) = (f.evaluate(yp) - f.evaluate(ym)) / (2 * step);
            }
            CHECK((f.jacobian_at(y) - fd).norm() <= 1e-5 * (1.0 + fd.norm()));
        }
    }
    SECTION("first term is linear in s_p") {
        // constant-score probes: with s_p == const c the smoothing term is
        // c * mean k + gradient term, so doubling c doubles the score part
        struct ConstScore final : ScoreModel {
            Vector c;
            explicit ConstScore(Vector v) : c(std::move(v)) {}
            int dim() const override { return static_cast<int>(c.size()); }
            Vector score(const Vector&) const override { return c; }
            json to_json() const override { return {{"type", "const"}}; }
        };
        Rng rng(7);
        const Matrix X = rng.normal_mat(20, 2);
        Vector c = rng.normal_vec(2);
        const auto m1 = std::make_shared<ConstScore>(c);
        const auto m2 = std::make_shared<ConstScore>(Vector(2.0 * c));
        const auto m0 = std::make_shared<ConstScore>(Vector(Vector::Zero(2)));
        const KernelSpec spec = median_heuristic_ambient(X);
        const ScoreDiffField f1 = ke_diff(X, m1, spec);
        const ScoreDiffField f2 = ke_diff(X, m2, spec);
        const ScoreDiffField f0 = ke_diff(X, m0, spec);
        // (f2 - f0) = 2 (f1 - f0)
        CHECK(((f2.delta() - f0.delta()) - 2.0 * (f1.delta() - f0.delta())).norm() <= 1e-12);
    }
}

TEST_CASE("stein gradient estimator", "[score_field]") {
    SECTION("huge ridge shrinks the estimate to zero") {
        Rng rng(8);
        const Matrix X = rng.normal_mat(30, 2);
        const Matrix S = stein_gradient_estimate(X, median_heuristic_ambient(X), 1e12);
        CHECK(S.cwiseAbs().maxCoeff() <= 1e-6);
    }
    SECTION("recovers the standard normal score within RMSE 0.3") {
        const auto q = std::make_shared<GaussianModel>(GaussianModel::standard(5));
        const Matrix X = q->sample(500, 17);
        KernelSpec spec = median_heuristic_ambient(X);
        spec.bandwidth_sq *= kGeBandwidthScale;
        const Matrix S = stein_gradient_estimate(X, spec, 1e-3);
        const double rmse = std::sqrt((S + X).squaredNorm() / static_cast<double>(S.size()));
        CHECK(rmse <= 0.3);
    }
    SECTION("shape and residual contract") {
        Rng rng(9);
        const Matrix X = rng.normal_mat(40, 3);
        KernelSpec spec = median_heuristic_ambient(X);
        const Matrix S = stein_gradient_estimate(X, spec, 1e-3);
        CHECK(S.rows() == 40);
        CHECK(S.cols() == 3);
        CHECK(S.allFinite());
        // residual <= 1e-8 * ||<grad,K>|| is enforced inside; recompute here
        const double h = spec.bandwidth_sq;
        const Matrix K = rbf_gram(X, spec);
        const Matrix gradK = (2.0 / h) * (K.rowwise().sum().asDiagonal() * X - K * X);
        Matrix reg = K;
        reg.diagonal().array() += 1e-3;
        CHECK((reg * S + gradK).norm() <= 1e-8 * gradK.norm());
    }
    SECTION("invalid ridge") {
        CHECK_THROWS_AS(stein_gradient_estimate(Matrix::Zero(5, 2), KernelSpec{}, 0.0),
                        std::invalid_argument);
    }
}

TEST_CASE("ge field", "[score_field]") {
    const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(3));
    const Matrix X = p->sample(200, 23);
    const ScoreDiffField f = ge_diff(X, p);
    SECTION("cached rows and jacobians are finite") {
        CHECK(f.delta().allFinite());
        for (const Matrix& J : f.jacobians()) CHECK(J.allFinite());
    }
    SECTION("p = q keeps the field small") {
        CHECK(f.delta().cwiseAbs().mean() <= 0.5);
    }
    SECTION("no off-sample evaluator") {
        CHECK_THROWS_AS(f.evaluate(Vector::Zero(3)), std::logic_error);
    }
}
