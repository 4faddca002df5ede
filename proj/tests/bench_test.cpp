#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "shotopt/bench.hpp"

using namespace shotopt;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               fs::path("shotopt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig config_from_string(const std::string& text) {
    std::istringstream in(text);
    return parse_config_text(in, "<inline>");
}

} // namespace

TEST_CASE("generate_ensemble is deterministic, normalized, uniform") {
    const auto a = generate_ensemble(7, 2, 3, 1);
    const auto b = generate_ensemble(7, 2, 3, 1);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].probability == doctest::Approx(1.0 / 3.0));
        double norm = 0.0;
        for (std::size_t k = 0; k < a[i].state.dim(); ++k) {
            CHECK(a[i].state.amplitudes[k] == b[i].state.amplitudes[k]);
            norm += std::norm(a[i].state.amplitudes[k]);
        }
        CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
    }
    // depth=0: every entry stays |0...0>, so the density matrix is pure.
    const auto zeros = generate_ensemble(3, 2, 5, 0);
    std::vector<std::pair<StateVector, double>> ens;
    for (const auto& e : zeros) ens.push_back({e.state, e.probability});
    CHECK(exact_top_eigenvalues(density_from_ensemble(ens), 1)[0] == doctest::Approx(1.0));
}

TEST_CASE("dataset file round trip preserves states and probabilities") {
    TempDir tmp;
    const std::string path = (tmp.path / "data.txt").string();
    const auto original = generate_ensemble(42, 3, 4, 2);
    save_dataset(path, original);
    const auto loaded = load_dataset(path);
    REQUIRE(loaded.size() == original.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].probability == doctest::Approx(original[i].probability).epsilon(1e-15));
        for (std::size_t k = 0; k < loaded[i].state.dim(); ++k)
            CHECK(std::abs(loaded[i].state.amplitudes[k] - original[i].state.amplitudes[k]) < 1e-15);
    }
}

TEST_CASE("dataset loader validates probabilities and norms") {
    TempDir tmp;
    const std::string bad_p = (tmp.path / "badp.txt").string();
    {
        std::ofstream out(bad_p);
        out << "nqubits=1 entries=2\np=0.5\n1 0\n0 0\n# comment\np=0.4\n0 0\n1 0\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(bad_p), doctest::Contains("probabilities sum"),
                         std::runtime_error);

    const std::string bad_norm = (tmp.path / "badnorm.txt").string();
    {
        std::ofstream out(bad_norm);
        out << "nqubits=1 entries=1\np=1.0\n0.5 0\n0.5 0\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(bad_norm), doctest::Contains("norm"), std::runtime_error);

    // A norm off by less than 1e-6 is accepted and renormalized.
    const std::string near = (tmp.path / "near.txt").string();
    {
        std::ofstream out(near);
        out.precision(17);
        out << "nqubits=1 entries=1\np=1.0\n" << 0.9999999 << " 0\n0 0\n";
    }
    const auto entries = load_dataset(near);
    CHECK(std::abs(entries[0].state.amplitudes[0] - cplx(1.0, 0.0)) < 1e-9);
}

TEST_CASE("eigenvalue_error oracles") {
    // Diagonal ensemble + identity circuit: exact diagonalization, error 0.
    StateVector b01 = init_zero(2);
    b01.amplitudes = {cplx(0), cplx(1), cplx(0), cplx(0)};
    std::vector<DatasetEntry> diag{{init_zero(2), 0.7, std::nullopt}, {b01, 0.3, std::nullopt}};
    ParamCircuit id;
    id.n_qubits = 2;
    CHECK(eigenvalue_error(diag, id, {}, 2) == doctest::Approx(0.0).epsilon(1e-12));

    // Maximally mixed: all eigenvalues and diagonal entries are 1/4 under any
    // unitary, so the error vanishes.
    StateVector b10 = init_zero(2), b11 = init_zero(2);
    b10.amplitudes = {cplx(0), cplx(0), cplx(1), cplx(0)};
    b11.amplitudes = {cplx(0), cplx(0), cplx(0), cplx(1)};
    std::vector<DatasetEntry> mixed{{init_zero(2), 0.25, std::nullopt},
                                    {b01, 0.25, std::nullopt},
                                    {b10, 0.25, std::nullopt},
                                    {b11, 0.25, std::nullopt}};
    const ParamCircuit c = build_hea(2, 1);
    std::vector<double> theta(static_cast<std::size_t>(c.n_params), 0.37);
    CHECK(eigenvalue_error(mixed, c, theta, 4) == doctest::Approx(0.0).epsilon(1e-12));

    // Rank-1 ensemble under a random unitary: compare against a dense
    // brute-force computation.
    std::vector<DatasetEntry> pure{{init_zero(2), 1.0, std::nullopt}};
    const StateVector evolved = apply_circuit(init_zero(2), c, theta);
    std::vector<double> diag_vals;
    for (const auto& amp : evolved.amplitudes) diag_vals.push_back(std::norm(amp));
    std::sort(diag_vals.begin(), diag_vals.end(), std::greater<>());
    double expected = (1.0 - diag_vals[0]) * (1.0 - diag_vals[0]);
    for (std::size_t k = 1; k < 4; ++k) expected += diag_vals[k] * diag_vals[k];
    CHECK(eigenvalue_error(pure, c, theta, 4) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("config parsing: defaults, overrides, and hard errors") {
    const auto cfg = config_from_string(
        "task = vqse_pca\nqubits = 4 # inline comment\nlayers = 2\n"
        "s_max = 5000\nseeds = 1, 2, 3\n");
    CHECK(cfg.task == Task::VqsePca);
    CHECK(cfg.n_qubits == 4);
    CHECK(cfg.s_max == 5000);
    CHECK(cfg.metric == MetricKind::EigenvalueError);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.mu == doctest::Approx(0.99));

    CHECK_THROWS_AS(config_from_string("task = vqse_pca\nbogus_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(config_from_string("qubits = four\n"), ConfigError);
    CHECK_THROWS_AS(config_from_string("task = frobnicate\n"), ConfigError);
    CHECK_THROWS_AS(config_from_string("s_max = 0\n"), ConfigError);
    CHECK_THROWS_AS(config_from_string("just a line\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("/nonexistent/path/config.txt"), ConfigError);
}

TEST_CASE("run_experiment writes monotone traces and a summary") {
    TempDir tmp;
    auto cfg = config_from_string(
        "task = vqse_pca\nqubits = 2\nlayers = 1\ndataset_count = 4\n"
        "s_max = 2000\nseeds = 1, 2, 3\n");
    cfg.output_dir = tmp.path.string();
    const auto result = run_experiment(cfg);
    CHECK(result.failures.empty());
    REQUIRE(result.trace_paths.size() == 3);
    for (const auto& path : result.trace_paths) {
        std::ifstream in(path);
        REQUIRE(in);
        std::string header;
        std::getline(in, header);
        CHECK(header == "iter,shots,loss,metric,wall_ms");
        long long prev_shots = 0, expected_iter = 0, iter = 0, shots = 0;
        std::string line;
        while (std::getline(in, line)) {
            REQUIRE(std::sscanf(line.c_str(), "%lld,%lld", &iter, &shots) == 2);
            CHECK(iter == expected_iter++);
            CHECK(shots > prev_shots);
            prev_shots = shots;
        }
        CHECK(expected_iter > 0);
    }
    CHECK(fs::exists(result.summary_path));
    const std::string summary = read_file(result.summary_path);
    CHECK(summary.rfind("budget,loss_median", 0) == 0);
}

TEST_CASE("identical config and seeds give byte-identical traces") {
    TempDir tmp_a, tmp_b;
    auto cfg = config_from_string(
        "task = autoencoder\nqubits = 2\ntrash_qubits = 1\nlayers = 1\ndataset_count = 3\n"
        "s_max = 1500\nseeds = 9\n");
    cfg.output_dir = tmp_a.path.string();
    const auto ra = run_experiment(cfg);
    cfg.output_dir = tmp_b.path.string();
    const auto rb = run_experiment(cfg);
    REQUIRE(ra.trace_paths.size() == 1);
    REQUIRE(rb.trace_paths.size() == 1);
    CHECK(read_file(ra.trace_paths[0]) == read_file(rb.trace_paths[0]));
    CHECK(read_file(ra.summary_path) == read_file(rb.summary_path));
}

TEST_CASE("summarize_traces aggregates existing trace files") {
    TempDir tmp;
    auto cfg = config_from_string(
        "task = vqse_pca\nqubits = 2\nlayers = 1\ndataset_count = 3\ns_max = 1200\nseeds = 4, 5\n");
    cfg.output_dir = tmp.path.string();
    run_experiment(cfg);
    const std::string out = (tmp.path / "agg.csv").string();
    summarize_traces((tmp.path / "trace_*.csv").string(), out);
    const std::string text = read_file(out);
    CHECK(text.rfind("budget,loss_median", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') > 2);
    CHECK_THROWS_AS(summarize_traces((tmp.path / "nope_*.csv").string(), out), std::runtime_error);
}

TEST_CASE("mse_toy task runs end to end") {
    TempDir tmp;
    auto cfg = config_from_string(
        "task = mse_toy\nqubits = 2\nlayers = 1\ndataset_count = 3\ns_max = 900\nseeds = 1\n");
    cfg.output_dir = tmp.path.string();
    const auto result = run_experiment(cfg);
    CHECK(result.failures.empty());
    CHECK(result.trace_paths.size() == 1);
}

TEST_CASE("adam runs through the experiment harness") {
    TempDir tmp;
    auto cfg = config_from_string(
        "task = vqse_pca\nqubits = 2\nlayers = 1\ndataset_count = 3\noptimizer = adam\n"
        "adam_shots = 5\ns_max = 3000\nseeds = 1\nmax_iterations = 4\n");
    cfg.output_dir = tmp.path.string();
    const auto result = run_experiment(cfg);
    CHECK(result.failures.empty());
    CHECK(result.trace_paths.size() == 1);
}
