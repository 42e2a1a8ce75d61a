#include <catch2/catch_amalgamated.hpp>

#include "sksd/gof.hpp"

using namespace sksd;
using Catch::Approx;

TEST_CASE("bootstrap samples", "[gof]") {
    SECTION("zero gram gives all-zero replicates") {
        const Vector bs = bootstrap_samples(Matrix(Matrix::Zero(20, 20)), 50, 7);
        CHECK(bs.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("deterministic given seed") {
        Rng rng(1);
        const Matrix raw = rng.normal_mat(15, 15);
        Matrix G = 0.5 * (raw + raw.transpose());
        G.diagonal().setZero();
        CHECK(bootstrap_samples(G, 64, 5) == bootstrap_samples(G, 64, 5));
        CHECK(bootstrap_samples(G, 64, 5) != bootstrap_samples(G, 64, 6));
    }
    SECTION("constant gram reflects the multinomial weight normalization") {
        // with G_ij = c off-diagonal: sum_{i!=j} v_i v_j = (sum v)^2 - sum v^2
        // and sum_i v_i = sum_i (w_i - 1/N) = 0 exactly, so each replicate is
        // -c * sum_i v_i^2 <= 0
        const Eigen::Index N = 30;
        Matrix G = Matrix::Constant(N, N, 2.0);
        G.diagonal().setZero();
        const Vector bs = bootstrap_samples(G, 100, 11);
        for (int m = 0; m < bs.size(); ++m) CHECK(bs[m] <= 1e-12);
    }
    SECTION("input validation") {
        CHECK_THROWS_AS(bootstrap_samples(Matrix(Matrix::Zero(5, 5)), 0, 1), std::invalid_argument);
        Matrix bad = Matrix::Zero(4, 4);
        bad(0, 1) = 1.0;  // asymmetric
        CHECK_THROWS_AS(bootstrap_samples(bad, 10, 1), std::invalid_argument);
    }
}

TEST_CASE("gof decision rule", "[gof]") {
    // synthetic gram with a large positive statistic: every bootstrap sample
    // sits below it, the proportion is 0, and the test rejects
    const Eigen::Index N = 40;
    SECTION("statistic above every replicate rejects") {
        Matrix G = Matrix::Constant(N, N, 5.0);
        G.diagonal().setZero();
        const GofOutcome out = gof_test_from_gram(G, 200, 0.05, 3);
        CHECK(out.statistic == Approx(5.0));
        CHECK(out.proportion_above == 0.0);
        CHECK(out.reject);
    }
    SECTION("statistic below every replicate fails to reject") {
        Matrix G = Matrix::Constant(N, N, -5.0);
        G.diagonal().setZero();
        const GofOutcome out = gof_test_from_gram(G, 200, 0.05, 3);
        CHECK(out.proportion_above == 1.0);
        CHECK_FALSE(out.reject);
    }
    SECTION("reject flag is consistent with the proportion") {
        Rng rng(9);
        for (int rep = 0; rep < 10; ++rep) {
            const Matrix raw = rng.normal_mat(25, 25);
            Matrix G = 0.5 * (raw + raw.transpose());
            G.diagonal().setZero();
            const GofOutcome out = gof_test_from_gram(G, 100, 0.3, rep);
            CHECK(out.reject == (out.proportion_above < out.alpha));
            const double recount =
                static_cast<double>((out.bootstrap.array() > out.statistic).count()) / 100.0;
            CHECK(out.proportion_above == Approx(recount));
        }
    }
    SECTION("alpha validation") {
        CHECK_THROWS_AS(gof_test_from_gram(Matrix(Matrix::Zero(5, 5)), 10, 0.0, 1), std::invalid_argument);
    }
}

TEST_CASE("bootstrap reuses the materialized gram", "[gof]") {
    // evaluation-count probe: the pair kernel runs exactly once per unordered
    // pair during assembly and never again inside the bootstrap loop
    Rng rng(13);
    const Matrix X = rng.normal_mat(12, 2);
    const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(2));
    const KernelSpec spec = median_heuristic_ambient(X);
    long evals = 0;
    auto counting = [&](const Vector& a, const Vector& b) {
        ++evals;
        return ksd_u_kernel(a, b, *p, spec);
    };
    const Matrix G = assemble_gram(counting, X);
    const long after_assembly = evals;
    CHECK(after_assembly == 12 * 11 / 2);
    const Vector bs = bootstrap_samples(G, 500, 3);
    const GofOutcome out = gof_test_from_gram(G, 500, 0.05, 3);
    (void)bs;
    (void)out;
    CHECK(evals == after_assembly);
}

TEST_CASE("gof test end to end on a gross mismatch", "[gof]") {
    // far-separated mean: SKSD must reject with near certainty
    const int D = 3;
    Vector mu = Vector::Constant(D, 3.0);
    const auto p = std::make_shared<GaussianModel>(GaussianModel::standard(D));
    const auto q = std::make_shared<GaussianModel>(mu, Vector::Ones(D));
    const Matrix X = q->sample(150, 17);
    const GofOutcome out = gof_test(X, *p, SliceSet::identity(D), 300, 0.05, 5);
    CHECK(out.reject);
    CHECK(out.statistic > 0.0);
}

TEST_CASE("benchmark models", "[gof]") {
    const BenchmarkModels lap = make_benchmark_models(Benchmark::Laplace, 5);
    CHECK(lap.p->dim() == 5);
    CHECK(std::dynamic_pointer_cast<const LaplaceModel>(lap.q) != nullptr);
    const BenchmarkModels nul = make_benchmark_models(Benchmark::Null, 4);
    CHECK(nul.p == nul.q);
    const BenchmarkModels mvt = make_benchmark_models(Benchmark::Mvt, 3);
    // p variance matches the t(5) variance 5/3
    const auto g = std::dynamic_pointer_cast<const GaussianModel>(mvt.p);
    REQUIRE(g != nullptr);
    CHECK(g->var_diag()[0] == Approx(5.0 / 3.0));
    CHECK_THROWS_AS(benchmark_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("rejection rate harness", "[gof]") {
    GofRunConfig cfg;
    cfg.bench = Benchmark::Diffusion;
    cfg.dim = 8;
    cfg.n_train = 100;
    cfg.n_test = 300;
    cfg.bootstrap_m = 200;

    SECTION("single trial is a bernoulli draw") {
        const RejectionSummary s = rejection_rate(cfg, 1, 42);
        CHECK((s.rate == 0.0 || s.rate == 1.0));
        CHECK(s.trials.size() == 1);
    }
    SECTION("strong alternative rejects") {
        const RejectionSummary s = rejection_rate(cfg, 5, 42);
        CHECK(s.rate == 1.0);
    }
    SECTION("result is invariant to the thread count") {
        const RejectionSummary s1 = rejection_rate(cfg, 4, 7, 1);
        const RejectionSummary s3 = rejection_rate(cfg, 4, 7, 3);
        REQUIRE(s1.trials.size() == s3.trials.size());
        for (std::size_t i = 0; i < s1.trials.size(); ++i) {
            CHECK(s1.trials[i].statistic == s3.trials[i].statistic);
            CHECK(s1.trials[i].threshold_prop == s3.trials[i].threshold_prop);
        }
    }
    SECTION("null configuration stays near the significance level") {
        GofRunConfig nul;
        nul.bench = Benchmark::Null;
        nul.dim = 4;
        nul.n_train = 80;
        nul.n_test = 200;
        nul.bootstrap_m = 300;
        const RejectionSummary s = rejection_rate(nul, 40, 11);
        CHECK(s.rate <= 0.2);  // coarse guard; the calibrated band is checked in acceptance
    }
}

TEST_CASE("rbm trial harness", "[gof]") {
    RbmRunConfig cfg;
    cfg.dim = 8;
    cfg.hidden = 6;
    cfg.sigma = 0.3;
    cfg.prune_m = 3;
    cfg.n_train = 200;
    cfg.n_test = 200;
    cfg.burn_in = 200;
    cfg.train_burn_in = 50;
    cfg.bootstrap_m = 200;

    const TrialRecord rec = run_rbm_trial(cfg, 0, 31);
    CHECK(rec.slices.count() == 3);
    CHECK(std::isfinite(rec.statistic));
    SECTION("deterministic per trial") {
        const TrialRecord again = run_rbm_trial(cfg, 0, 31);
        CHECK(again.statistic == rec.statistic);
        CHECK(again.threshold_prop == rec.threshold_prop);
    }
}

TEST_CASE("rbm pruning keeps the discriminative slices", "[gof]") {
    // desk-scale mirror of the pruning sweep: the top-3 slices do at least as
    // well as the full basis on the same seeds
    RbmRunConfig cfg;
    cfg.dim = 20;
    cfg.hidden = 15;
    cfg.sigma = 0.05;
    cfg.estimator = FieldKind::Exact;
    cfg.n_train = 600;
    cfg.n_test = 500;
    cfg.burn_in = 500;
    cfg.train_burn_in = 50;
    cfg.bootstrap_m = 500;

    cfg.prune_m = 3;
    const RejectionSummary pruned = rbm_rejection_rate(cfg, 6, 77);
    cfg.prune_m = 20;
    const RejectionSummary full = rbm_rejection_rate(cfg, 6, 77);
    CHECK(pruned.rate >= full.rate);
    CHECK(pruned.rate == 1.0);
}
