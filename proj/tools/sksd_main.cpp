// Command-line harness: benchmark GOF suites, RBM tests, ICA training and
// slice inspection.  Output is machine-first (JSONL / CSV); every file starts
// with a reproducibility header carrying the full config, seed and version.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sksd/sksd.hpp"

namespace fs = std::filesystem;
using namespace sksd;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("SKSD_OUTPUT_DIR");
    return env && *env ? env : ".";
}

void require_directory(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw std::invalid_argument("output directory does not exist: " + dir);
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
    const fs::path path = fs::path(dir) / name;
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot write " + path.string());
    out.precision(17);
    return out;
}

void write_header_comment(std::ofstream& out, const json& config, std::uint64_t seed) {
    out << "# sksd " << kVersion << " seed=" << seed << " config=" << config.dump() << "\n";
}

json header_record(const json& config, std::uint64_t seed) {
    return {{"version", kVersion}, {"seed", seed}, {"config", config}};
}

struct CommonOpts {
    std::string out_dir = default_out_dir();
    std::uint64_t seed = 0;
    int threads = 1;
    std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--out", o.out_dir, "Output directory (default $SKSD_OUTPUT_DIR or .)");
    cmd->add_option("--seed", o.seed, "Master seed; per-trial seeds are derived from it");
    cmd->add_option("--threads", o.threads, "Worker threads for trial-level parallelism")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--format", o.format, "Per-trial record format: json (JSONL) or csv")
        ->check(CLI::IsMember({"json", "csv"}));
}

void write_trials(const std::string& dir, const std::string& stem, const std::string& format,
                  const json& config, std::uint64_t seed, const std::vector<TrialRecord>& trials,
                  const json& extra = json::object()) {
    if (format == "json") {
        auto out = open_out(dir, stem + ".jsonl");
        out << header_record(config, seed).dump() << "\n";
        for (const auto& t : trials) {
            json rec{{"trial", t.trial},
                     {"statistic", t.statistic},
                     {"threshold_prop", t.threshold_prop},
                     {"reject", t.reject},
                     {"seed", t.seed}};
            rec.update(extra);
            out << rec.dump() << "\n";
        }
    } else {
        auto out = open_out(dir, stem + ".csv");
        write_header_comment(out, config, seed);
        out << "trial,statistic,threshold_prop,reject,seed\n";
        for (const auto& t : trials)
            out << t.trial << ',' << t.statistic << ',' << t.threshold_prop << ',' << (t.reject ? 1 : 0)
                << ',' << t.seed << "\n";
    }
}

// ---------------------------------------------------------------------------
// gof
// ---------------------------------------------------------------------------

struct GofOpts {
    CommonOpts common;
    std::string benchmark = "laplace";
    int dim = 50;
    std::string estimator = "ex";
    std::string test = "sksd";
    std::string basis = "identity";
    int trials = 100;
    int prune = 0;
    double noise = 0.0;
    int go_epochs = 0;
    bool random_init = false;
    double alpha = 0.05;
    int bootstrap = 1000;
    int n_train = 200;
    int n_test = 800;
};

std::string gof_method_label(const GofOpts& o) {
    if (o.test == "ksd") return "ksd";
    std::string m = o.basis == "active" ? "sksd-rg+" : "sksd-g+";
    m += o.random_init ? "rand" : o.estimator;
    if (o.go_epochs > 0) m += "+go" + std::to_string(o.go_epochs);
    if (o.prune > 0) m += "+m" + std::to_string(o.prune);
    return m;
}

json gof_config_json(const GofOpts& o) {
    return {{"benchmark", o.benchmark},     {"dim", o.dim},     {"estimator", o.estimator},
            {"test", o.test},               {"basis", o.basis}, {"trials", o.trials},
            {"prune", o.prune},             {"noise", o.noise}, {"go_epochs", o.go_epochs},
            {"random_init", o.random_init}, {"alpha", o.alpha}, {"bootstrap", o.bootstrap},
            {"n_train", o.n_train},         {"n_test", o.n_test}};
}

int cmd_gof(const GofOpts& o) {
    require(o.trials >= 1, "gof: trials must be positive");
    require(o.dim >= 1, "gof: dim must be positive");
    require(o.alpha > 0.0 && o.alpha < 1.0, "gof: alpha must lie in (0,1)");
    require_directory(o.common.out_dir);

    GofRunConfig cfg;
    cfg.bench = benchmark_from_name(o.benchmark);
    cfg.dim = o.dim;
    cfg.estimator = field_kind_from_name(o.estimator);
    cfg.test = o.test == "ksd" ? TestKind::Ksd : TestKind::SksdG;
    cfg.basis = o.basis == "active" ? SliceBasis::Active : SliceBasis::Identity;
    if (o.prune > 0) cfg.prune_m = o.prune;
    cfg.noise = o.noise;
    cfg.random_g_init = o.random_init;
    if (o.go_epochs > 0) {
        GoConfig go;
        go.epochs = o.go_epochs;
        cfg.go = go;
    }
    cfg.alpha = o.alpha;
    cfg.bootstrap_m = o.bootstrap;
    cfg.n_train = o.n_train;
    cfg.n_test = o.n_test;

    const RejectionSummary summary = rejection_rate(cfg, o.trials, o.common.seed, o.common.threads);

    const json config = gof_config_json(o);
    const std::string method = gof_method_label(o);
    const std::string stem = "gof_" + o.benchmark + "_d" + std::to_string(o.dim) + "_" + method;
    write_trials(o.common.out_dir, stem, o.common.format, config, o.common.seed, summary.trials);

    auto csv = open_out(o.common.out_dir, stem + "_summary.csv");
    write_header_comment(csv, config, o.common.seed);
    csv << "benchmark,D,method,trials,rejection_rate,mean_seconds_per_trial\n";
    csv << o.benchmark << ',' << o.dim << ',' << method << ',' << o.trials << ',' << summary.rate << ','
        << summary.mean_seconds << "\n";

    std::cout << "benchmark=" << o.benchmark << " D=" << o.dim << " method=" << method
              << " rejection_rate=" << summary.rate << " sec/trial=" << summary.mean_seconds << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rbm
// ---------------------------------------------------------------------------

struct RbmOpts {
    CommonOpts common;
    int dim = 50;
    int hidden = 40;
    std::vector<double> sigmas{0.01};
    std::string estimator = "ex";
    int prune = 3;
    int trials = 100;
    double alpha = 0.05;
    int bootstrap = 1000;
    int n_train = 2000;
    int n_test = 1000;
    int burn_in = 2000;
    int train_burn_in = 100;
};

int cmd_rbm(const RbmOpts& o) {
    require(!o.sigmas.empty(), "rbm: perturbation list must be nonempty");
    require(o.trials >= 1, "rbm: trials must be positive");
    require(o.dim >= 1 && o.hidden >= 1, "rbm: dims must be positive");
    require_directory(o.common.out_dir);

    json config{{"dim", o.dim},           {"hidden", o.hidden},       {"sigmas", o.sigmas},
                {"estimator", o.estimator}, {"prune", o.prune},       {"trials", o.trials},
                {"alpha", o.alpha},       {"bootstrap", o.bootstrap}, {"n_train", o.n_train},
                {"n_test", o.n_test},     {"burn_in", o.burn_in},     {"train_burn_in", o.train_burn_in}};
    const std::string method = "sksd-rg+" + o.estimator + "+m" + std::to_string(o.prune);

    auto csv = open_out(o.common.out_dir, "rbm_summary.csv");
    write_header_comment(csv, config, o.common.seed);
    csv << "sigma,D,hidden,method,trials,rejection_rate\n";

    for (std::size_t si = 0; si < o.sigmas.size(); ++si) {
        RbmRunConfig cfg;
        cfg.dim = o.dim;
        cfg.hidden = o.hidden;
        cfg.sigma = o.sigmas[si];
        cfg.estimator = field_kind_from_name(o.estimator);
        cfg.prune_m = o.prune;
        cfg.n_train = o.n_train;
        cfg.n_test = o.n_test;
        cfg.burn_in = o.burn_in;
        cfg.train_burn_in = o.train_burn_in;
        cfg.alpha = o.alpha;
        cfg.bootstrap_m = o.bootstrap;

        const std::uint64_t sigma_seed = derive_seed(o.common.seed, 0xB0 + si);
        const RejectionSummary summary = rbm_rejection_rate(cfg, o.trials, sigma_seed, o.common.threads);

        std::ostringstream stem;
        stem << "rbm_sigma" << o.sigmas[si] << "_" << method;
        write_trials(o.common.out_dir, stem.str(), o.common.format, config, sigma_seed, summary.trials,
                     json{{"sigma", o.sigmas[si]}});
        csv << o.sigmas[si] << ',' << o.dim << ',' << o.hidden << ',' << method << ',' << o.trials << ','
            << summary.rate << "\n";
        std::cout << "sigma=" << o.sigmas[si] << " rejection_rate=" << summary.rate << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ica
// ---------------------------------------------------------------------------

struct IcaOpts {
    CommonOpts common;
    int dim = 10;
    int n_train = 20000;
    int n_test = 5000;
    int iterations = 15000;
    int batch = 100;
    int refresh = 200;
    int eval_every = 200;
    int slice_sample = 3000;
    double lr = 1e-3;
    double nu = 5.0;
    std::string estimator = "ke";
};

int cmd_ica(const IcaOpts& o) {
    require(o.dim >= 2, "ica: dim must be at least 2");
    require(o.iterations >= 1 && o.batch >= 2, "ica: invalid loop sizes");
    require_directory(o.common.out_dir);

    json config{{"dim", o.dim},
                {"n_train", o.n_train},
                {"n_test", o.n_test},
                {"iterations", o.iterations},
                {"batch", o.batch},
                {"refresh", o.refresh},
                {"eval_every", o.eval_every},
                {"slice_sample", o.slice_sample},
                {"lr", o.lr},
                {"nu", o.nu},
                {"estimator", o.estimator}};

    // synthetic data from a well-conditioned generator
    Rng gen_rng(derive_seed(o.common.seed, 0xDA));
    const Matrix Wstar = well_conditioned_matrix(o.dim, gen_rng);
    const auto generator = std::make_shared<IcaModel>(Wstar, o.nu);
    const Matrix train = generator->sample(o.n_train, derive_seed(o.common.seed, 0xDB));
    const Matrix test = generator->sample(o.n_test, derive_seed(o.common.seed, 0xDC));

    IcaTrainConfig cfg;
    cfg.iterations = o.iterations;
    cfg.batch_size = o.batch;
    cfg.refresh_every = o.refresh;
    cfg.eval_every = o.eval_every;
    cfg.slice_sample = o.slice_sample;
    cfg.step_size = o.lr;
    cfg.nu = o.nu;
    cfg.estimator = field_kind_from_name(o.estimator);
    cfg.generator = generator;
    cfg.seed = derive_seed(o.common.seed, 0xDD);

    const IcaTrainResult res = train_ica(train, test, cfg);

    auto csv = open_out(o.common.out_dir, "ica_nll.csv");
    write_header_comment(csv, config, o.common.seed);
    csv << "iter,test_nll\n";
    for (const auto& [it, nll] : res.nll_curve) csv << it << ',' << nll << "\n";

    auto wout = open_out(o.common.out_dir, "ica_model.json");
    json jw = header_record(config, o.common.seed);
    jw["W"] = IcaModel(res.W, o.nu).to_json()["W"];
    jw["generator_W"] = generator->to_json()["W"];
    jw["final_test_nll"] = res.nll_curve.back().second;
    jw["generator_test_nll"] = ica_test_nll(test, Wstar, o.nu);
    wout << jw.dump(2) << "\n";

    std::cout << "initial_nll=" << res.nll_curve.front().second
              << " final_nll=" << res.nll_curve.back().second
              << " generator_nll=" << jw["generator_test_nll"].get<double>() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// slices
// ---------------------------------------------------------------------------

struct SlicesOpts {
    CommonOpts common;
    std::string benchmark = "diffusion";
    int dim = 50;
    std::string estimator = "ex";
    int n = 200;
    int prune = 0;
    double noise = 0.0;
};

int cmd_slices(const SlicesOpts& o) {
    require(o.n >= 2, "slices: need at least 2 samples");
    require_directory(o.common.out_dir);

    json config{{"benchmark", o.benchmark}, {"dim", o.dim},     {"estimator", o.estimator},
                {"n", o.n},                 {"prune", o.prune}, {"noise", o.noise}};

    const BenchmarkModels models = make_benchmark_models(benchmark_from_name(o.benchmark), o.dim);
    const Matrix X = models.q->sample(o.n, derive_seed(o.common.seed, 1));

    ActiveSliceConfig acfg;
    acfg.estimator = field_kind_from_name(o.estimator);
    acfg.q = models.q;
    if (o.prune > 0) acfg.prune_m = o.prune;
    acfg.noise = o.noise;
    acfg.seed = derive_seed(o.common.seed, 2);

    const ScoreDiffField field = build_field(X, models.p, acfg);
    const SpectralSummary spectral = compute_S(field);
    const SliceSet slices = active_slice_algorithm(X, models.p, acfg);

    auto csv = open_out(o.common.out_dir, "slices_spectrum.csv");
    write_header_comment(csv, config, o.common.seed);
    csv << "index,eigenvalue\n";
    for (Eigen::Index i = 0; i < spectral.eigenvalues.size(); ++i)
        csv << i << ',' << spectral.eigenvalues[i] << "\n";

    auto jout = open_out(o.common.out_dir, "slices.json");
    json js = header_record(config, o.common.seed);
    js["slices"] = slices.to_json();
    jout << js.dump(2) << "\n";

    std::cout.precision(10);
    std::cout << "top eigenvalue " << spectral.eigenvalues[0] << "\n";
    std::cout << "top eigenvector";
    for (Eigen::Index d = 0; d < spectral.eigenvectors.rows(); ++d)
        std::cout << ' ' << spectral.eigenvectors(d, 0);
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sliced kernelized Stein discrepancy tests and training"};
    app.require_subcommand(1);

    GofOpts gof;
    auto* cg = app.add_subcommand("gof", "Benchmark goodness-of-fit rejection rates");
    add_common(cg, gof.common);
    cg->add_option("--benchmark", gof.benchmark)
        ->check(CLI::IsMember({"laplace", "mvt", "diffusion", "null"}));
    cg->add_option("--dim", gof.dim);
    cg->add_option("--estimator", gof.estimator)->check(CLI::IsMember({"ex", "ke", "ge"}));
    cg->add_option("--test", gof.test, "Statistic: sksd or ksd baseline")
        ->check(CLI::IsMember({"sksd", "ksd"}));
    cg->add_option("--basis", gof.basis, "r slices: identity (fixed) or active (spectral)")
        ->check(CLI::IsMember({"identity", "active"}));
    cg->add_option("--trials", gof.trials);
    cg->add_option("--prune", gof.prune, "Keep only the top-m r slices (active basis)");
    cg->add_option("--noise", gof.noise, "Gaussian noise added to slices before normalization");
    cg->add_option("--go-epochs", gof.go_epochs, "Gradient refinement epochs for g slices");
    cg->add_flag("--random-init", gof.random_init, "Random unit g init instead of active slices");
    cg->add_option("--alpha", gof.alpha);
    cg->add_option("--bootstrap", gof.bootstrap);
    cg->add_option("--train", gof.n_train);
    cg->add_option("--test-n", gof.n_test);

    RbmOpts rbm;
    auto* cr = app.add_subcommand("rbm", "RBM goodness-of-fit with perturbed weights");
    add_common(cr, rbm.common);
    cr->add_option("--dim", rbm.dim);
    cr->add_option("--hidden", rbm.hidden);
    cr->add_option("--sigma", rbm.sigmas, "Perturbation levels (repeatable)");
    cr->add_option("--estimator", rbm.estimator)->check(CLI::IsMember({"ex", "ke", "ge"}));
    cr->add_option("--prune", rbm.prune);
    cr->add_option("--trials", rbm.trials);
    cr->add_option("--alpha", rbm.alpha);
    cr->add_option("--bootstrap", rbm.bootstrap);
    cr->add_option("--train-n", rbm.n_train);
    cr->add_option("--test-n", rbm.n_test);
    cr->add_option("--burn-in", rbm.burn_in);
    cr->add_option("--train-burn-in", rbm.train_burn_in);

    IcaOpts ica;
    auto* ci = app.add_subcommand("ica", "Train an ICA model by SKSD minimization");
    add_common(ci, ica.common);
    ci->add_option("--dim", ica.dim);
    ci->add_option("--train-n", ica.n_train);
    ci->add_option("--test-n", ica.n_test);
    ci->add_option("--iterations", ica.iterations);
    ci->add_option("--batch", ica.batch);
    ci->add_option("--refresh", ica.refresh, "Iterations between active-slice refreshes");
    ci->add_option("--eval-every", ica.eval_every);
    ci->add_option("--slice-sample", ica.slice_sample);
    ci->add_option("--lr", ica.lr);
    ci->add_option("--nu", ica.nu);
    ci->add_option("--estimator", ica.estimator)->check(CLI::IsMember({"ex", "ke", "ge"}));

    SlicesOpts slc;
    auto* cs = app.add_subcommand("slices", "Inspect active slices and the S spectrum");
    add_common(cs, slc.common);
    cs->add_option("--benchmark", slc.benchmark)
        ->check(CLI::IsMember({"laplace", "mvt", "diffusion", "null"}));
    cs->add_option("--dim", slc.dim);
    cs->add_option("--estimator", slc.estimator)->check(CLI::IsMember({"ex", "ke", "ge"}));
    cs->add_option("--n", slc.n);
    cs->add_option("--prune", slc.prune);
    cs->add_option("--noise", slc.noise);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (cg->parsed()) return cmd_gof(gof);
        if (cr->parsed()) return cmd_rbm(rbm);
        if (ci->parsed()) return cmd_ica(ica);
        if (cs->parsed()) return cmd_slices(slc);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
