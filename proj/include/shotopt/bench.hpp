#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "shotopt/circuit.hpp"
#include "shotopt/lossspec.hpp"
#include "shotopt/optimizers.hpp"
#include "shotopt/simulator.hpp"

namespace shotopt {

// Errors that map to CLI exit code 2 (bad configuration) rather than 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Task { VqsePca, Autoencoder, MseToy };
enum class AnsatzKind { Hea, StronglyEntangling };
enum class OptimizerKind { Refoqus, Rosalin, Adam };
enum class MetricKind { EigenvalueError, Loss };

struct ExperimentConfig {
    Task task = Task::VqsePca;
    int n_qubits = 4;
    AnsatzKind ansatz = AnsatzKind::Hea;
    int layers = 2;

    // Dataset: either a generated ensemble or a file.
    std::string dataset_file; // empty -> generated
    std::uint64_t dataset_seed = 0;
    int dataset_count = 20;
    int dataset_depth = 2;

    OptimizerKind optimizer = OptimizerKind::Refoqus;
    double alpha = 0.0; // 0 -> default 1/lipschitz_bound(spec)
    double mu = 0.99;
    long long s_min = 2;
    long long s_max = 100000;
    long long shot_cap = 10000;
    long long max_iterations = 0;
    long long adam_shots = 100;

    std::vector<std::uint64_t> seeds = {0};
    MetricKind metric = MetricKind::EigenvalueError;
    int metric_m = 1;     // top-m eigenvalues for eigenvalue_error
    int trash_qubits = 0; // autoencoder; 0 -> ceil(n/2)
    std::string output_dir = ".";
    bool record_wall_time = false; // off by default so traces stay byte-identical
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has non-numeric value '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has non-integer value '" + v + "'");
    }
}

} // namespace detail

// Parses the flat key=value config format. '#' starts a comment; unknown keys
// are a hard error.
inline ExperimentConfig parse_config_text(std::istream& in, const std::string& origin) {
    ExperimentConfig cfg;
    bool metric_set = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));

        if (key == "task") {
            if (val == "vqse_pca") cfg.task = Task::VqsePca;
            else if (val == "autoencoder") cfg.task = Task::Autoencoder;
            else if (val == "mse_toy") cfg.task = Task::MseToy;
            else throw ConfigError(origin + ": unknown task '" + val + "'");
            if (!metric_set) cfg.metric = cfg.task == Task::VqsePca ? MetricKind::EigenvalueError : MetricKind::Loss;
        } else if (key == "qubits") {
            cfg.n_qubits = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "ansatz") {
            if (val == "hea") cfg.ansatz = AnsatzKind::Hea;
            else if (val == "strongly_entangling") cfg.ansatz = AnsatzKind::StronglyEntangling;
            else throw ConfigError(origin + ": unknown ansatz '" + val + "'");
        } else if (key == "layers") {
            cfg.layers = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "dataset_file") {
            cfg.dataset_file = val;
        } else if (key == "dataset_seed") {
            cfg.dataset_seed = static_cast<std::uint64_t>(detail::parse_int(key, val));
        } else if (key == "dataset_count") {
            cfg.dataset_count = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "dataset_depth") {
            cfg.dataset_depth = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "optimizer") {
            if (val == "refoqus") cfg.optimizer = OptimizerKind::Refoqus;
            else if (val == "rosalin") cfg.optimizer = OptimizerKind::Rosalin;
            else if (val == "adam") cfg.optimizer = OptimizerKind::Adam;
            else throw ConfigError(origin + ": unknown optimizer '" + val + "'");
        } else if (key == "alpha") {
            cfg.alpha = detail::parse_real(key, val);
        } else if (key == "mu") {
            cfg.mu = detail::parse_real(key, val);
        } else if (key == "s_min") {
            cfg.s_min = detail::parse_int(key, val);
        } else if (key == "s_max") {
            cfg.s_max = detail::parse_int(key, val);
        } else if (key == "shot_cap") {
            cfg.shot_cap = detail::parse_int(key, val);
        } else if (key == "max_iterations") {
            cfg.max_iterations = detail::parse_int(key, val);
        } else if (key == "adam_shots") {
            cfg.adam_shots = detail::parse_int(key, val);
        } else if (key == "seeds") {
            cfg.seeds.clear();
            std::stringstream ss(val);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                tok = detail::trim(tok);
                if (!tok.empty()) cfg.seeds.push_back(static_cast<std::uint64_t>(detail::parse_int(key, tok)));
            }
            if (cfg.seeds.empty()) throw ConfigError(origin + ": 'seeds' must list at least one seed");
        } else if (key == "metric") {
            if (val == "eigenvalue_error") cfg.metric = MetricKind::EigenvalueError;
            else if (val == "loss") cfg.metric = MetricKind::Loss;
            else throw ConfigError(origin + ": unknown metric '" + val + "'");
            metric_set = true;
        } else if (key == "metric_m") {
            cfg.metric_m = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "trash_qubits") {
            cfg.trash_qubits = static_cast<int>(detail::parse_int(key, val));
        } else if (key == "output_dir") {
            cfg.output_dir = val;
        } else if (key == "record_wall_time") {
            if (val == "true" || val == "1") cfg.record_wall_time = true;
            else if (val == "false" || val == "0") cfg.record_wall_time = false;
            else throw ConfigError(origin + ": 'record_wall_time' must be true/false");
        } else {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    if (cfg.s_max < 1) throw ConfigError(origin + ": s_max must be >= 1");
    if (cfg.n_qubits < 1 || cfg.n_qubits > kMaxQubits) throw ConfigError(origin + ": qubits out of range");
    if (cfg.layers < 1) throw ConfigError(origin + ": layers must be >= 1");
    if (cfg.dataset_count < 1) throw ConfigError(origin + ": dataset_count must be >= 1");
    if (!(cfg.mu >= 0.0 && cfg.mu < 1.0)) throw ConfigError(origin + ": mu must be in [0, 1)");
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config_text(in, path);
}

// Random pure-state ensemble: each entry is a random-angle HEA circuit of the
// given depth applied to |0...0>, with uniform probabilities. depth=0 leaves
// every entry at |0...0>.
inline std::vector<DatasetEntry> generate_ensemble(std::uint64_t seed, int n_qubits, int count,
                                                   int depth) {
    if (count < 1) throw std::invalid_argument("generate_ensemble: count must be >= 1");
    std::vector<DatasetEntry> entries;
    entries.reserve(static_cast<std::size_t>(count));
    Rng rng = make_stream(seed, {0xda7a5e7});
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < count; ++i) {
        StateVector state = init_zero(n_qubits);
        if (depth > 0) {
            const ParamCircuit c = build_hea(n_qubits, depth);
            std::vector<double> theta(static_cast<std::size_t>(c.n_params));
            for (auto& t : theta) t = u(rng);
            state = apply_circuit(state, c, theta);
        }
        entries.push_back({std::move(state), 1.0 / static_cast<double>(count), std::nullopt});
    }
    return entries;
}

// Dataset file format: header "nqubits=<n> entries=<N>", then per entry one
// "p=<real>" line and 2^n "<re> <im>" amplitude lines. '#' starts a comment.
inline void save_dataset(const std::string& path, const std::vector<DatasetEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open '" + path + "'");
    const int n = entries.front().state.n_qubits;
    out << "nqubits=" << n << " entries=" << entries.size() << "\n";
    out.precision(17);
    for (const auto& e : entries) {
        if (e.state.n_qubits != n) throw std::invalid_argument("save_dataset: mixed qubit counts");
        out << "p=" << e.probability << "\n";
        for (const auto& amp : e.state.amplitudes) out << amp.real() << " " << amp.imag() << "\n";
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for '" + path + "'");
}

inline std::vector<DatasetEntry> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open '" + path + "'");

    // Pull non-empty, comment-stripped lines with their numbers for errors.
    std::vector<std::pair<int, std::string>> lines;
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        raw = detail::trim(raw);
        if (!raw.empty()) lines.push_back({lineno, raw});
    }
    auto fail = [&](std::size_t idx, const std::string& msg) -> std::runtime_error {
        const int ln = idx < lines.size() ? lines[idx].first : lineno;
        return std::runtime_error("load_dataset: " + path + ":" + std::to_string(ln) + ": " + msg);
    };
    if (lines.empty()) throw fail(0, "empty file");

    int n = 0, count = 0;
    if (std::sscanf(lines[0].second.c_str(), "nqubits=%d entries=%d", &n, &count) != 2)
        throw fail(0, "expected header 'nqubits=<n> entries=<N>'");
    if (n < 1 || n > kMaxQubits || count < 1) throw fail(0, "header values out of range");
    const std::size_t dim = std::size_t{1} << n;

    std::vector<DatasetEntry> entries;
    std::size_t idx = 1;
    double psum = 0.0;
    for (int e = 0; e < count; ++e) {
        if (idx >= lines.size()) throw fail(idx, "unexpected end of file in entry " + std::to_string(e));
        double p = 0.0;
        if (std::sscanf(lines[idx].second.c_str(), "p=%lf", &p) != 1)
            throw fail(idx, "expected 'p=<real>' for entry " + std::to_string(e));
        if (!(p > 0.0)) throw fail(idx, "probability must be positive");
        ++idx;
        StateVector state;
        state.n_qubits = n;
        state.amplitudes.resize(dim);
        for (std::size_t a = 0; a < dim; ++a, ++idx) {
            if (idx >= lines.size()) throw fail(idx, "unexpected end of file in entry " + std::to_string(e));
            double re = 0.0, im = 0.0;
            std::stringstream ss(lines[idx].second);
            if (!(ss >> re >> im)) throw fail(idx, "expected '<re> <im>'");
            state.amplitudes[a] = {re, im};
        }
        double norm = 0.0;
        for (const auto& amp : state.amplitudes) norm += std::norm(amp);
        norm = std::sqrt(norm);
        if (std::abs(norm - 1.0) > 1e-6)
            throw std::runtime_error("load_dataset: " + path + ": entry " + std::to_string(e) +
                                     " has norm " + std::to_string(norm) + " (tolerance 1e-6)");
        for (auto& amp : state.amplitudes) amp /= norm;
        psum += p;
        entries.push_back({std::move(state), p, std::nullopt});
    }
    if (idx != lines.size()) throw fail(idx, "trailing content after last entry");
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::runtime_error("load_dataset: " + path + ": probabilities sum to " +
                                 std::to_string(psum) + ", expected 1");
    return entries;
}

// Squared-error between the top-m exact eigenvalues of the ensemble density
// matrix and the m largest diagonal entries of U rho U-dagger, both sorted
// descending.
inline double eigenvalue_error(const std::vector<DatasetEntry>& entries, const ParamCircuit& circuit,
                               const std::vector<double>& theta, int m) {
    const int n = entries.front().state.n_qubits;
    if (m < 1 || m > (1 << n)) throw std::invalid_argument("eigenvalue_error: m out of range");

    std::vector<std::pair<StateVector, double>> ensemble;
    for (const auto& e : entries) ensemble.push_back({e.state, e.probability});
    const auto lambda = exact_top_eigenvalues(density_from_ensemble(ensemble), m);

    // Diagonal of U rho U-dagger = sum_i p_i |<k|U|psi_i>|^2.
    std::vector<double> diag(std::size_t{1} << n, 0.0);
    for (const auto& e : entries) {
        const StateVector evolved = apply_circuit(e.state, circuit, theta);
        for (std::size_t k = 0; k < diag.size(); ++k)
            diag[k] += e.probability * std::norm(evolved.amplitudes[k]);
    }
    std::sort(diag.begin(), diag.end(), std::greater<>());

    double err = 0.0;
    for (int k = 0; k < m; ++k) err += (lambda[static_cast<std::size_t>(k)] - diag[static_cast<std::size_t>(k)]) *
                                       (lambda[static_cast<std::size_t>(k)] - diag[static_cast<std::size_t>(k)]);
    return err;
}

namespace detail {

// Builds the task's loss from a config and dataset. MSE labels come from a
// dataset-seed-derived stream so the toy task is deterministic.
inline LossSpec build_loss(const ExperimentConfig& cfg, std::vector<DatasetEntry> entries) {
    switch (cfg.task) {
        case Task::VqsePca:
            return vqse_local_loss(std::move(entries), cfg.n_qubits);
        case Task::Autoencoder: {
            int trash = cfg.trash_qubits > 0 ? cfg.trash_qubits : (cfg.n_qubits + 1) / 2;
            return autoencoder_local_loss(std::move(entries), cfg.n_qubits, trash);
        }
        case Task::MseToy: {
            Rng rng = make_stream(cfg.dataset_seed, {0x1abe15});
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            std::vector<std::vector<WeightedTerm>> terms;
            for (auto& e : entries) {
                e.label = u(rng);
                terms.push_back({{1.0, single_factor_term(cfg.n_qubits, 0, Factor::Z)}});
            }
            return mse_loss(std::move(entries), std::move(terms));
        }
    }
    throw std::logic_error("build_loss: unreachable");
}

inline std::string task_name(Task t) {
    switch (t) {
        case Task::VqsePca: return "vqse_pca";
        case Task::Autoencoder: return "autoencoder";
        default: return "mse_toy";
    }
}

inline std::string optimizer_name(OptimizerKind o) {
    switch (o) {
        case OptimizerKind::Refoqus: return "refoqus";
        case OptimizerKind::Rosalin: return "rosalin";
        default: return "adam";
    }
}

inline std::string format_real(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

inline double percentile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    if (xs.size() == 1) return xs[0];
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

} // namespace detail

struct ExperimentResult {
    std::vector<std::string> trace_paths;
    std::string summary_path;
    std::vector<std::string> failures; // "seed <s>: <what>"
};

// Writes one trace CSV per seed and a per-budget-gridpoint summary with
// median and 2.5/97.5 percentile bands. A failed seed is recorded and the
// rest continue; all seeds failing is a runtime error.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);

    std::vector<DatasetEntry> entries =
        cfg.dataset_file.empty()
            ? generate_ensemble(cfg.dataset_seed, cfg.n_qubits, cfg.dataset_count, cfg.dataset_depth)
            : load_dataset(cfg.dataset_file);
    if (!entries.empty() && entries.front().state.n_qubits != cfg.n_qubits)
        throw ConfigError("config: dataset qubit count does not match 'qubits'");

    const LossSpec spec = detail::build_loss(cfg, std::move(entries));
    const ParamCircuit circuit = cfg.ansatz == AnsatzKind::Hea
                                     ? build_hea(cfg.n_qubits, cfg.layers)
                                     : build_strongly_entangling(cfg.n_qubits, cfg.layers);

    OptimizerConfig ocfg;
    ocfg.lipschitz = lipschitz_bound(spec);
    ocfg.alpha = cfg.alpha > 0.0 ? cfg.alpha : 1.0 / ocfg.lipschitz;
    ocfg.mu = cfg.mu;
    ocfg.s_min = cfg.s_min;
    ocfg.s_max = cfg.s_max;
    ocfg.per_component_shot_cap = cfg.shot_cap;
    ocfg.max_iterations = cfg.max_iterations;

    MetricFn metric_fn;
    if (cfg.metric == MetricKind::EigenvalueError) {
        metric_fn = [&spec, &circuit, m = cfg.metric_m](const std::vector<double>& th) {
            return eigenvalue_error(spec.entries, circuit, th, m);
        };
    }

    const std::string stem = detail::task_name(cfg.task) + "_" + detail::optimizer_name(cfg.optimizer);
    ExperimentResult result;
    std::vector<std::pair<std::uint64_t, RunRecord>> records;

    for (std::uint64_t seed : cfg.seeds) {
        try {
            ocfg.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            RunRecord rec;
            switch (cfg.optimizer) {
                case OptimizerKind::Refoqus: rec = refoqus_run(spec, circuit, ocfg, metric_fn); break;
                case OptimizerKind::Rosalin: rec = rosalin_run(spec, circuit, ocfg, metric_fn); break;
                case OptimizerKind::Adam: {
                    AdamConfig ad;
                    ad.alpha = cfg.alpha > 0.0 ? cfg.alpha : 0.01;
                    ad.shots_per_circuit = cfg.adam_shots;
                    rec = adam_run(spec, circuit, ocfg, ad, metric_fn);
                    break;
                }
            }
            const auto t1 = std::chrono::steady_clock::now();
            const double wall_ms =
                cfg.record_wall_time
                    ? std::chrono::duration<double, std::milli>(t1 - t0).count() /
                          std::max<std::size_t>(1, rec.rows.size())
                    : 0.0;

            const std::string path =
                (fs::path(cfg.output_dir) / ("trace_" + stem + "_seed" + std::to_string(seed) + ".csv"))
                    .string();
            std::ofstream out(path, std::ios::binary);
            if (!out) throw std::runtime_error("run_experiment: cannot open '" + path + "'");
            out << "iter,shots,loss,metric,wall_ms\n";
            for (const auto& row : rec.rows)
                out << row.iteration << "," << row.shots_cumulative << ","
                    << detail::format_real(row.loss) << "," << detail::format_real(row.metric) << ","
                    << detail::format_real(wall_ms) << "\n";
            if (!out) throw std::runtime_error("run_experiment: write failed for '" + path + "'");
            result.trace_paths.push_back(path);
            records.push_back({seed, std::move(rec)});
        } catch (const std::exception& ex) {
            result.failures.push_back("seed " + std::to_string(seed) + ": " + ex.what());
        }
    }
    if (records.empty())
        throw std::runtime_error("run_experiment: every seed failed (" +
                                 (result.failures.empty() ? std::string("no detail") : result.failures[0]) + ")");

    // Budget grid: 50 log-spaced points from the smallest first-iteration
    // spend to the budget ceiling; each trace is read as a step function.
    long long lo = std::numeric_limits<long long>::max();
    for (const auto& [seed, rec] : records) lo = std::min(lo, rec.rows.front().shots_cumulative);
    const long long hi = std::max(cfg.s_max, lo + 1);
    const int grid_points = 50;

    result.summary_path = (fs::path(cfg.output_dir) / ("summary_" + stem + ".csv")).string();
    std::ofstream sout(result.summary_path, std::ios::binary);
    if (!sout) throw std::runtime_error("run_experiment: cannot open '" + result.summary_path + "'");
    sout << "budget,loss_median,loss_p2.5,loss_p97.5,metric_median,metric_p2.5,metric_p97.5,seeds\n";
    for (int gp = 0; gp < grid_points; ++gp) {
        const double frac = static_cast<double>(gp) / (grid_points - 1);
        const long long budget = static_cast<long long>(std::llround(
            std::exp(std::log(static_cast<double>(lo)) +
                     frac * (std::log(static_cast<double>(hi)) - std::log(static_cast<double>(lo))))));
        std::vector<double> losses, metrics;
        for (const auto& [seed, rec] : records) {
            const IterationRow* last = nullptr;
            for (const auto& row : rec.rows) {
                if (row.shots_cumulative > budget) break;
                last = &row;
            }
            if (last) {
                losses.push_back(last->loss);
                metrics.push_back(last->metric);
            }
        }
        if (losses.empty()) continue;
        sout << budget << "," << detail::format_real(detail::percentile(losses, 0.5)) << ","
             << detail::format_real(detail::percentile(losses, 0.025)) << ","
             << detail::format_real(detail::percentile(losses, 0.975)) << ","
             << detail::format_real(detail::percentile(metrics, 0.5)) << ","
             << detail::format_real(detail::percentile(metrics, 0.025)) << ","
             << detail::format_real(detail::percentile(metrics, 0.975)) << "," << losses.size() << "\n";
    }
    if (!sout) throw std::runtime_error("run_experiment: write failed for '" + result.summary_path + "'");
    return result;
}

// Aggregates existing trace CSVs (matched by a '*'/'?' filename glob) into the
// same summary format as run_experiment.
inline void summarize_traces(const std::string& glob, const std::string& out_path) {
    namespace fs = std::filesystem;
    const fs::path pattern(glob);
    const fs::path dir = pattern.parent_path().empty() ? fs::path(".") : pattern.parent_path();
    const std::string fname = pattern.filename().string();

    auto matches = [](const std::string& pat, const std::string& s) {
        // Classic iterative glob match over '*' and '?'.
        std::size_t p = 0, i = 0, star = std::string::npos, mark = 0;
        while (i < s.size()) {
            if (p < pat.size() && (pat[p] == '?' || pat[p] == s[i])) {
                ++p, ++i;
            } else if (p < pat.size() && pat[p] == '*') {
                star = p++;
                mark = i;
            } else if (star != std::string::npos) {
                p = star + 1;
                i = ++mark;
            } else {
                return false;
            }
        }
        while (p < pat.size() && pat[p] == '*') ++p;
        return p == pat.size();
    };

    std::vector<std::string> paths;
    if (fs::is_directory(dir))
        for (const auto& de : fs::directory_iterator(dir))
            if (de.is_regular_file() && matches(fname, de.path().filename().string()))
                paths.push_back(de.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("summarize: no trace files match '" + glob + "'");

    struct Row {
        long long shots;
        double loss, metric;
    };
    std::vector<std::vector<Row>> traces;
    for (const auto& path : paths) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("summarize: cannot open '" + path + "'");
        std::string line;
        if (!std::getline(in, line) || detail::trim(line) != "iter,shots,loss,metric,wall_ms")
            throw std::runtime_error("summarize: '" + path + "' is not a trace CSV");
        std::vector<Row> rows;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            Row r{};
            long long iter = 0;
            double wall = 0.0;
            if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf", &iter, &r.shots, &r.loss, &r.metric,
                            &wall) != 5)
                throw std::runtime_error("summarize: bad row in '" + path + "': " + line);
            rows.push_back(r);
        }
        if (rows.empty()) throw std::runtime_error("summarize: '" + path + "' has no rows");
        traces.push_back(std::move(rows));
    }

    long long lo = std::numeric_limits<long long>::max(), hi = 0;
    for (const auto& t : traces) {
        lo = std::min(lo, t.front().shots);
        hi = std::max(hi, t.back().shots);
    }
    hi = std::max(hi, lo + 1);
    const int grid_points = 50;

    std::ofstream sout(out_path, std::ios::binary);
    if (!sout) throw std::runtime_error("summarize: cannot open '" + out_path + "'");
    sout << "budget,loss_median,loss_p2.5,loss_p97.5,metric_median,metric_p2.5,metric_p97.5,seeds\n";
    for (int gp = 0; gp < grid_points; ++gp) {
        const double frac = static_cast<double>(gp) / (grid_points - 1);
        const long long budget = static_cast<long long>(std::llround(
            std::exp(std::log(static_cast<double>(lo)) +
                     frac * (std::log(static_cast<double>(hi)) - std::log(static_cast<double>(lo))))));
        std::vector<double> losses, metrics;
        for (const auto& t : traces) {
            const Row* last = nullptr;
            for (const auto& row : t) {
                if (row.shots > budget) break;
                last = &row;
            }
            if (last) {
                losses.push_back(last->loss);
                metrics.push_back(last->metric);
            }
        }
        if (losses.empty()) continue;
        sout << budget << "," << detail::format_real(detail::percentile(losses, 0.5)) << ","
             << detail::format_real(detail::percentile(losses, 0.025)) << ","
             << detail::format_real(detail::percentile(losses, 0.975)) << ","
             << detail::format_real(detail::percentile(metrics, 0.5)) << ","
             << detail::format_real(detail::percentile(metrics, 0.025)) << ","
             << detail::format_real(detail::percentile(metrics, 0.975)) << "," << losses.size() << "\n";
    }
    if (!sout) throw std::runtime_error("summarize: write failed for '" + out_path + "'");
}

} // namespace shotopt
