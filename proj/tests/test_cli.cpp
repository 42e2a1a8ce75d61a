#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sksd/sksd.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
    const char* p = std::getenv("SKSD_CLI_BIN");
    REQUIRE(p != nullptr);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = cli_bin() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("sksd_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("cli validation failures exit with code 2", "[cli]") {
    TempDir tmp;
    const std::string out = " --out " + tmp.path.string();
    CHECK(run("gof --trials 0" + out) == 2);
    CHECK(run("gof --benchmark bogus" + out) == 2);
    CHECK(run("gof --alpha 1.5 --trials 2" + out) == 2);
    CHECK(run("rbm --sigma 0.1 --trials 0" + out) == 2);
    CHECK(run("ica --dim 1" + out) == 2);
    CHECK(run("nosuchcommand") == 2);
    CHECK(run("gof --trials 2 --out /nonexistent/dir/xyz") == 2);
}

TEST_CASE("cli gof writes jsonl and summary csv", "[cli]") {
    TempDir tmp;
    const int rc = run("gof --benchmark diffusion --dim 6 --estimator ex --trials 3 --seed 7"
                       " --train 80 --test-n 200 --bootstrap 200 --out " +
                       tmp.path.string());
    REQUIRE(rc == 0);

    const fs::path jsonl = tmp.path / "gof_diffusion_d6_sksd-g+ex.jsonl";
    const fs::path csv = tmp.path / "gof_diffusion_d6_sksd-g+ex_summary.csv";
    REQUIRE(fs::exists(jsonl));
    REQUIRE(fs::exists(csv));

    // reproducibility header + one record per trial
    std::ifstream in(jsonl);
    std::string line;
    REQUIRE(std::getline(in, line));
    const auto header = sksd::json::parse(line);
    CHECK(header.at("version") == sksd::kVersion);
    CHECK(header.at("seed") == 7);
    CHECK(header.at("config").at("benchmark") == "diffusion");
    int records = 0;
    while (std::getline(in, line)) {
        const auto rec = sksd::json::parse(line);
        CHECK(rec.contains("statistic"));
        CHECK(rec.contains("threshold_prop"));
        CHECK(rec.contains("reject"));
        CHECK(rec.contains("seed"));
        CHECK(rec.at("trial") == records);
        ++records;
    }
    CHECK(records == 3);

    const std::string summary = slurp(csv);
    CHECK(summary.find("benchmark,D,method,trials,rejection_rate,mean_seconds_per_trial") !=
          std::string::npos);
    CHECK(summary.find("diffusion,6,sksd-g+ex,3,1,") != std::string::npos);
}

TEST_CASE("cli csv trial format and env-var output directory", "[cli]") {
    TempDir tmp;
    const std::string cmd = "SKSD_OUTPUT_DIR=" + tmp.path.string() + " " + cli_bin() +
                            " gof --benchmark null --dim 3 --trials 2 --seed 1 --train 50 --test-n 80"
                            " --bootstrap 100 --format csv > /dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string trials = slurp(tmp.path / "gof_null_d3_sksd-g+ex.csv");
    CHECK(trials.find("trial,statistic,threshold_prop,reject,seed") != std::string::npos);
    CHECK(trials.rfind("# sksd ", 0) == 0);
}

TEST_CASE("cli rbm outputs are byte-identical across reruns", "[cli]") {
    TempDir a, b;
    const std::string base =
        "rbm --dim 6 --hidden 4 --sigma 0 --sigma 0.4 --trials 2 --seed 11 --train-n 100"
        " --test-n 100 --burn-in 60 --train-burn-in 20 --bootstrap 100 --out ";
    REQUIRE(run(base + a.path.string()) == 0);
    REQUIRE(run(base + b.path.string()) == 0);
    for (const char* name :
         {"rbm_summary.csv", "rbm_sigma0_sksd-rg+ex+m3.jsonl", "rbm_sigma0.4_sksd-rg+ex+m3.jsonl"}) {
        CAPTURE(name);
        CHECK(slurp(a.path / name) == slurp(b.path / name));
    }
}

TEST_CASE("cli slices prints the diffusion direction and writes the spectrum", "[cli]") {
    TempDir tmp;
    const std::string cmd = cli_bin() + " slices --benchmark diffusion --dim 8 --estimator ex --n 150" +
                            " --seed 3 --out " + tmp.path.string() + " > " +
                            (tmp.path / "stdout.txt").string() + " 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);

    // printed top eigenvector concentrates on the first coordinate
    std::ifstream in(tmp.path / "stdout.txt");
    std::string line, vec_line;
    while (std::getline(in, line))
        if (line.rfind("top eigenvector", 0) == 0) vec_line = line;
    REQUIRE_FALSE(vec_line.empty());
    std::istringstream iss(vec_line.substr(std::string("top eigenvector").size()));
    double first;
    iss >> first;
    CHECK(std::abs(first) >= 0.999);

    // spectrum csv: index,eigenvalue with a dominant leading value
    std::ifstream csv(tmp.path / "slices_spectrum.csv");
    REQUIRE(std::getline(csv, line));  // header comment
    REQUIRE(std::getline(csv, line));
    CHECK(line == "index,eigenvalue");
    std::vector<double> vals;
    while (std::getline(csv, line)) {
        const auto comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        vals.push_back(std::stod(line.substr(comma + 1)));
    }
    REQUIRE(vals.size() == 8);
    CHECK(vals[1] <= 1e-6 * vals[0]);

    const auto js = sksd::json::parse(slurp(tmp.path / "slices.json"));
    const sksd::SliceSet slices = sksd::SliceSet::from_json(js.at("slices"));
    CHECK(slices.count() == 8);
}

TEST_CASE("cli ica desk run improves the nll", "[cli]") {
    TempDir tmp;
    const std::string cmd = cli_bin() +
                            " ica --dim 4 --train-n 500 --test-n 200 --iterations 200 --refresh 100"
                            " --eval-every 100 --slice-sample 500 --seed 5 --out " +
                            tmp.path.string() + " > /dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);

    std::ifstream csv(tmp.path / "ica_nll.csv");
    std::string line;
    REQUIRE(std::getline(csv, line));  // header comment
    REQUIRE(std::getline(csv, line));
    CHECK(line == "iter,test_nll");
    std::vector<double> nll;
    while (std::getline(csv, line)) {
        const auto comma = line.find(',');
        nll.push_back(std::stod(line.substr(comma + 1)));
    }
    REQUIRE(nll.size() >= 2);
    CHECK(nll.back() < nll.front());

    const auto jw = sksd::json::parse(slurp(tmp.path / "ica_model.json"));
    CHECK(jw.contains("W"));
    CHECK(jw.at("config").at("dim") == 4);
}
