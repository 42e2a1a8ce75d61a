#pragma once

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sksd/active_slices.hpp"
#include "sksd/discrepancy.hpp"
#include "sksd/models.hpp"

namespace sksd {

struct GofOutcome {
    double statistic = 0.0;
    Vector bootstrap;
    double proportion_above = 0.0;  // strict: #{m : bootstrap_m > statistic} / M
    bool reject = false;
    double alpha = 0.05;
};

/// Weighted bootstrap of a degenerate U-statistic: per replicate, draws counts
/// n ~ Multinomial(N, uniform), sets w = n / N and returns
///   sum_{i != j} (w_i - 1/N)(w_j - 1/N) gram_ij.
/// Reuses the materialized gram; the pair kernel is never re-evaluated.
inline Vector bootstrap_samples(const PairwiseStat& stat, int M, std::uint64_t seed) {
    require(M >= 1, "bootstrap_samples: need at least one replicate");
    const Matrix& gram = stat.gram;
    const Eigen::Index n = stat.n();

    Rng rng(seed);
    Matrix V(n, M);
    std::vector<double> counts(static_cast<std::size_t>(n));
    for (int m = 0; m < M; ++m) {
        std::fill(counts.begin(), counts.end(), 0.0);
        for (Eigen::Index i = 0; i < n; ++i)
            counts[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(n)))] += 1.0;
        for (Eigen::Index i = 0; i < n; ++i)
            V(i, m) = counts[static_cast<std::size_t>(i)] / static_cast<double>(n) - 1.0 / static_cast<double>(n);
    }
    // v^T G v per column; the gram diagonal is zero so i = j terms vanish
    const Matrix GV = gram * V;
    Vector out(M);
    for (int m = 0; m < M; ++m) out[m] = V.col(m).dot(GV.col(m));
    return out;
}

inline GofOutcome gof_test_from_gram(const PairwiseStat& stat, int M, double alpha, std::uint64_t seed) {
    require(alpha > 0.0 && alpha < 1.0, "gof_test: alpha must lie in (0, 1)");
    GofOutcome out;
    out.alpha = alpha;
    out.statistic = u_statistic_from_gram(stat.gram);
    out.bootstrap = bootstrap_samples(stat, M, seed);
    out.proportion_above =
        static_cast<double>((out.bootstrap.array() > out.statistic).count()) / static_cast<double>(M);
    out.reject = out.proportion_above < alpha;
    return out;
}

/// Goodness-of-fit test of H0: p = q from q-samples, using the slice-summed
/// SKSD U-statistic and the weighted bootstrap threshold.
inline GofOutcome gof_test(const Matrix& samples, const ScoreModel& model_p, const SliceSet& slices,
                           int M, double alpha, std::uint64_t seed) {
    return gof_test_from_gram(sksd_summed_gram(samples, model_p, slices), M, alpha, seed);
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

enum class Benchmark { Laplace, Mvt, Diffusion, Null };

inline Benchmark benchmark_from_name(const std::string& s) {
    if (s == "laplace") return Benchmark::Laplace;
    if (s == "mvt") return Benchmark::Mvt;
    if (s == "diffusion") return Benchmark::Diffusion;
    if (s == "null") return Benchmark::Null;
    throw std::invalid_argument("unknown benchmark '" + s + "' (expected laplace|mvt|diffusion|null)");
}

inline const char* benchmark_name(Benchmark b) {
    switch (b) {
        case Benchmark::Laplace: return "laplace";
        case Benchmark::Mvt: return "mvt";
        case Benchmark::Diffusion: return "diffusion";
        case Benchmark::Null: return "null";
    }
    return "?";
}

struct BenchmarkModels {
    ModelPtr p;  // model under test
    ModelPtr q;  // data distribution
};

inline BenchmarkModels make_benchmark_models(Benchmark bench, int dim) {
    require(dim >= 1, "benchmark: dim must be positive");
    switch (bench) {
        case Benchmark::Laplace:
            return {std::make_shared<GaussianModel>(GaussianModel::standard(dim)),
                    std::make_shared<LaplaceModel>(dim, 1.0 / std::sqrt(2.0))};
        case Benchmark::Mvt:
            return {std::make_shared<GaussianModel>(Vector::Zero(dim), Vector::Constant(dim, 5.0 / 3.0)),
                    std::make_shared<StudentTModel>(dim, 5.0, /*joint=*/false)};
        case Benchmark::Diffusion: {
            Vector var = Vector::Ones(dim);
            var[0] = 0.3;
            return {std::make_shared<GaussianModel>(GaussianModel::standard(dim)),
                    std::make_shared<GaussianModel>(Vector::Zero(dim), var)};
        }
        case Benchmark::Null: {
            auto m = std::make_shared<GaussianModel>(GaussianModel::standard(dim));
            return {m, m};
        }
    }
    throw std::logic_error("unreachable");
}

enum class SliceBasis {
    Identity,  // fixed O_r = I with active g_r per r (benchmark protocol)
    Active,    // both r (from S) and g_r (from H_r) spectral
};

enum class TestKind { SksdG, Ksd };

struct GofRunConfig {
    Benchmark bench = Benchmark::Laplace;
    int dim = 50;
    FieldKind estimator = FieldKind::Exact;
    TestKind test = TestKind::SksdG;
    SliceBasis basis = SliceBasis::Identity;
    std::optional<int> prune_m;
    double noise = 0.0;
    std::optional<GoConfig> go;  // gradient refinement after (or instead of) active g slices
    bool random_g_init = false;  // start refinement from random unit g rows (pure GO)
    int n_train = 200;
    int n_test = 800;
    int bootstrap_m = 1000;
    double alpha = 0.05;
    double ge_eta = 1e-3;
};

struct TrialRecord {
    int trial = 0;
    std::uint64_t seed = 0;
    double statistic = 0.0;
    double threshold_prop = 0.0;
    bool reject = false;
    double seconds = 0.0;
    SliceSet slices;
};

/// Slice search on the training split per the configured method.
inline SliceSet find_benchmark_slices(const Matrix& train, const BenchmarkModels& models,
                                      const GofRunConfig& cfg, std::uint64_t seed) {
    const int D = static_cast<int>(train.cols());
    if (cfg.basis == SliceBasis::Active) {
        ActiveSliceConfig acfg;
        acfg.estimator = cfg.estimator;
        acfg.q = models.q;
        acfg.prune_m = cfg.prune_m;
        acfg.noise = cfg.noise;
        acfg.ge_eta = cfg.ge_eta;
        if (cfg.go) {
            acfg.refine = cfg.go;
            acfg.refine->seed = derive_seed(seed, 0xA);
        }
        acfg.seed = seed;
        return active_slice_algorithm(train, models.p, acfg);
    }
    // Identity basis: r = e_d fixed; g_d from H_{e_d} unless starting from a
    // random init for pure gradient optimization.
    SliceSet slices = SliceSet::identity(D);
    if (cfg.random_g_init) {
        Rng rng(derive_seed(seed, 0x9));
        for (int d = 0; d < D; ++d) {
            Vector g = rng.normal_vec(D);
            slices.g_dirs.row(d) = (g / g.norm()).transpose();
        }
    } else {
        ActiveSliceConfig acfg;
        acfg.estimator = cfg.estimator;
        acfg.q = models.q;
        acfg.ge_eta = cfg.ge_eta;
        const ScoreDiffField field = build_field(train, models.p, acfg);
        for (int d = 0; d < D; ++d) {
            const Vector r = slices.r_dirs.row(d).transpose();
            const HrResult hr = compute_H_r(field, r);
            slices.g_dirs.row(d) = (hr.top_value > 1e-12 ? hr.top_vector : r).transpose();
        }
    }
    if (cfg.go) {
        GoConfig go = *cfg.go;
        go.seed = derive_seed(seed, 0xA);
        slices = refine_slices(train, *models.p, slices, go);
    }
    return slices;
}

inline TrialRecord run_gof_trial(const GofRunConfig& cfg, int trial, std::uint64_t master_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(trial));
    const BenchmarkModels models = make_benchmark_models(cfg.bench, cfg.dim);

    const Matrix all = models.q->sample(cfg.n_train + cfg.n_test, derive_seed(seed, 1));
    const Matrix train = all.topRows(cfg.n_train);
    const Matrix test = all.bottomRows(cfg.n_test);

    TrialRecord rec;
    rec.trial = trial;
    rec.seed = seed;
    if (cfg.test == TestKind::Ksd) {
        const GofOutcome out = gof_test_from_gram(ksd_gram(test, *models.p), cfg.bootstrap_m, cfg.alpha,
                                                  derive_seed(seed, 2));
        rec.statistic = out.statistic;
        rec.threshold_prop = out.proportion_above;
        rec.reject = out.reject;
    } else {
        rec.slices = find_benchmark_slices(train, models, cfg, seed);
        const GofOutcome out =
            gof_test(test, *models.p, rec.slices, cfg.bootstrap_m, cfg.alpha, derive_seed(seed, 2));
        rec.statistic = out.statistic;
        rec.threshold_prop = out.proportion_above;
        rec.reject = out.reject;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

struct RejectionSummary {
    double rate = 0.0;
    double mean_seconds = 0.0;
    std::vector<TrialRecord> trials;
};

/// Per trial: fresh q samples, train/test split, slice search on train,
/// bootstrap GOF test on test.  Trials carry independent derived seeds, so the
/// result is invariant to the thread count.
inline RejectionSummary rejection_rate(const GofRunConfig& cfg, int trials, std::uint64_t seed,
                                       int threads = 1) {
    require(trials >= 1, "rejection_rate: need at least one trial");
    RejectionSummary summary;
    summary.trials.resize(static_cast<std::size_t>(trials));
    const int workers = std::max(1, threads);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int t = next.fetch_add(1);
            if (t >= trials) break;
            summary.trials[static_cast<std::size_t>(t)] = run_gof_trial(cfg, t, seed);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    int rejected = 0;
    double secs = 0.0;
    for (const auto& rec : summary.trials) {
        rejected += rec.reject ? 1 : 0;
        secs += rec.seconds;
    }
    summary.rate = static_cast<double>(rejected) / static_cast<double>(trials);
    summary.mean_seconds = secs / static_cast<double>(trials);
    return summary;
}

// ---------------------------------------------------------------------------
// RBM harness
// ---------------------------------------------------------------------------

struct RbmRunConfig {
    int dim = 50;
    int hidden = 40;
    double sigma = 0.01;         // perturbation level of q's B matrix
    FieldKind estimator = FieldKind::Exact;
    int prune_m = 3;
    int n_train = 2000;          // pseudo-samples collected during early burn-in
    int n_test = 1000;
    int burn_in = 2000;
    int train_burn_in = 100;     // early stage of the chain for the pseudo pool
    int bootstrap_m = 1000;
    double alpha = 0.05;
    double ge_eta = 1e-3;
};

inline TrialRecord run_rbm_trial(const RbmRunConfig& cfg, int trial, std::uint64_t master_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(trial));
    const auto p = std::make_shared<RbmModel>(RbmModel::random(cfg.dim, cfg.hidden, derive_seed(seed, 1)));
    const auto q = std::make_shared<RbmModel>(p->perturbed(cfg.sigma, derive_seed(seed, 2)));

    const Matrix train = q->sample_gibbs(cfg.n_train, cfg.train_burn_in, derive_seed(seed, 3));
    const Matrix test = q->sample_gibbs(cfg.n_test, cfg.burn_in, derive_seed(seed, 4));

    ActiveSliceConfig acfg;
    acfg.estimator = cfg.estimator;
    acfg.q = q;
    acfg.prune_m = cfg.prune_m;
    acfg.ge_eta = cfg.ge_eta;
    acfg.seed = derive_seed(seed, 5);

    TrialRecord rec;
    rec.trial = trial;
    rec.seed = seed;
    rec.slices = active_slice_algorithm(train, p, acfg);
    const GofOutcome out = gof_test(test, *p, rec.slices, cfg.bootstrap_m, cfg.alpha, derive_seed(seed, 6));
    rec.statistic = out.statistic;
    rec.threshold_prop = out.proportion_above;
    rec.reject = out.reject;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

inline RejectionSummary rbm_rejection_rate(const RbmRunConfig& cfg, int trials, std::uint64_t seed,
                                           int threads = 1) {
    require(trials >= 1, "rbm_rejection_rate: need at least one trial");
    RejectionSummary summary;
    summary.trials.resize(static_cast<std::size_t>(trials));
    const int workers = std::max(1, threads);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int t = next.fetch_add(1);
            if (t >= trials) break;
            summary.trials[static_cast<std::size_t>(t)] = run_rbm_trial(cfg, t, seed);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    int rejected = 0;
    double secs = 0.0;
    for (const auto& rec : summary.trials) {
        rejected += rec.reject ? 1 : 0;
        secs += rec.seconds;
    }
    summary.rate = static_cast<double>(rejected) / static_cast<double>(trials);
    summary.mean_seconds = secs / static_cast<double>(trials);
    return summary;
}

}  // namespace sksd
