#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "shotopt/estimators.hpp"
#include "shotopt/lossspec.hpp"
#include "shotopt/sampling.hpp"

namespace shotopt {

struct OptimizerConfig {
    double alpha = 0.01;        // gradient-descent step size
    double lipschitz = 1.0;     // Lipschitz bound on the gradient
    double mu = 0.99;           // EMA decay for the shot-rule accumulators
    long long s_min = 2;        // per-component floor, in allocation blocks
    long long s_max = 100000;   // total shot budget
    long long per_component_shot_cap = 10000; // per-component per-iteration ceiling, in shots
    long long max_iterations = 0;             // 0 = until the budget runs out
    std::uint64_t seed = 0;
};

struct IterationRow {
    long long iteration = 0;
    long long shots_cumulative = 0;
    double loss = 0.0;
    double metric = 0.0;
};

struct RunRecord {
    std::vector<IterationRow> rows;
    std::vector<double> theta;
    long long total_shots = 0;
};

using MetricFn = std::function<double(const std::vector<double>&)>;

// gCANS shot rule: s_x = ceil( f * sigma_x * sum(sigma) / ||g||^2 ) with
// f = 2 L alpha / (2 - L alpha), clamped to [s_min, cap]. A vanishing gradient
// norm falls back to the floor.
inline std::vector<long long> gcans_shots(const std::vector<double>& sigma, double grad_norm_sq,
                                          double alpha, double lipschitz, long long s_min,
                                          long long cap) {
    const double f = 2.0 * lipschitz * alpha / (2.0 - lipschitz * alpha);
    double sigma_sum = 0.0;
    for (double sx : sigma) sigma_sum += sx;
    std::vector<long long> s(sigma.size(), s_min);
    if (grad_norm_sq <= 0.0) return s;
    for (std::size_t x = 0; x < sigma.size(); ++x) {
        const double raw = f * sigma[x] * sigma_sum / grad_norm_sq;
        // Clamp against the cap in double space: raw diverges near convergence
        // and an unguarded integer cast would overflow.
        if (raw >= static_cast<double>(cap))
            s[x] = cap;
        else
            s[x] = std::min(cap, std::max(s_min, static_cast<long long>(std::ceil(raw))));
    }
    return s;
}

// iCANS running-max clip: the largest raw recommendation seen so far bounds
// every later shot count.
struct IcansState {
    double running_max = 0.0;
};

// iCANS shot rule: s_x = ceil(f * sigma_x^2 / g_x^2), floored at s_min and
// capped by both the hard cap and the running maximum recommendation.
// A zero gradient component takes the cap value.
inline std::vector<long long> icans_shots(const std::vector<double>& sigma,
                                          const std::vector<double>& g, double alpha,
                                          double lipschitz, long long s_min, long long cap,
                                          IcansState* state = nullptr) {
    if (sigma.size() != g.size()) throw std::invalid_argument("icans_shots: length mismatch");
    const double f = 2.0 * lipschitz * alpha / (2.0 - lipschitz * alpha);
    std::vector<double> raw(sigma.size());
    double local_max = 0.0;
    for (std::size_t x = 0; x < sigma.size(); ++x) {
        raw[x] = g[x] == 0.0 ? static_cast<double>(cap) : f * sigma[x] * sigma[x] / (g[x] * g[x]);
        local_max = std::max(local_max, raw[x]);
    }
    long long eff_cap = cap;
    if (state) {
        state->running_max = std::max(state->running_max, local_max);
        if (state->running_max < static_cast<double>(cap))
            eff_cap = std::min(cap, static_cast<long long>(std::ceil(state->running_max)));
    }
    std::vector<long long> s(sigma.size());
    for (std::size_t x = 0; x < sigma.size(); ++x) {
        if (raw[x] >= static_cast<double>(eff_cap))
            s[x] = eff_cap;
        else
            s[x] = std::min(eff_cap, std::max(s_min, static_cast<long long>(std::ceil(raw[x]))));
    }
    return s;
}

namespace detail {

inline void validate_step(const OptimizerConfig& cfg) {
    const double la = cfg.lipschitz * cfg.alpha;
    if (!(la > 0.0) || !(la < 2.0))
        throw std::invalid_argument("optimizer: need 0 < alpha * L < 2 for the shot rules");
    if (cfg.s_min < 1 || cfg.per_component_shot_cap < cfg.s_min)
        throw std::invalid_argument("optimizer: invalid shot bounds");
}

inline std::vector<double> random_theta(int d, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    std::vector<double> theta(static_cast<std::size_t>(d));
    for (auto& t : theta) t = u(rng);
    return theta;
}

} // namespace detail

// Shot-adaptive gradient descent: evaluate an unbiased (gradient, variance)
// pair at a per-component block budget, update the bias-corrected EMAs, take
// a plain gradient step, and re-derive the next budgets with the gCANS rule.
// `eval(theta, shots_per_component)` must return the estimate and report the
// shots it actually consumed. Runs until the total budget is spent (the final
// iteration may overshoot it) or max_iterations is hit.
template <typename EvalFn>
inline RunRecord run_gcans_loop(int d, std::vector<double> theta, const OptimizerConfig& cfg,
                                long long s0, EvalFn&& eval, const MetricFn& loss_fn,
                                const MetricFn& metric_fn) {
    detail::validate_step(cfg);
    RunRecord rec;
    std::vector<double> chi_raw(static_cast<std::size_t>(d), 0.0);
    std::vector<double> xi_raw(static_cast<std::size_t>(d), 0.0);
    std::vector<long long> s(static_cast<std::size_t>(d), cfg.s_min);
    long long t = 0;

    while (rec.total_shots < cfg.s_max && (cfg.max_iterations == 0 || t < cfg.max_iterations)) {
        std::vector<long long> budgets(static_cast<std::size_t>(d));
        for (int x = 0; x < d; ++x) budgets[static_cast<std::size_t>(x)] = s[static_cast<std::size_t>(x)] * s0;
        GradientEstimate est = eval(theta, budgets);
        for (long long used : est.shots_per_component) rec.total_shots += used;

        const double corr = 1.0 - std::pow(cfg.mu, static_cast<double>(t + 1));
        std::vector<double> chi(static_cast<std::size_t>(d)), xi(static_cast<std::size_t>(d));
        for (int x = 0; x < d; ++x) {
            chi_raw[static_cast<std::size_t>(x)] =
                cfg.mu * chi_raw[static_cast<std::size_t>(x)] + (1.0 - cfg.mu) * est.g[static_cast<std::size_t>(x)];
            xi_raw[static_cast<std::size_t>(x)] =
                cfg.mu * xi_raw[static_cast<std::size_t>(x)] + (1.0 - cfg.mu) * est.S[static_cast<std::size_t>(x)];
            chi[static_cast<std::size_t>(x)] = chi_raw[static_cast<std::size_t>(x)] / corr;
            xi[static_cast<std::size_t>(x)] = xi_raw[static_cast<std::size_t>(x)] / corr;
        }
        for (int x = 0; x < d; ++x)
            theta[static_cast<std::size_t>(x)] -= cfg.alpha * est.g[static_cast<std::size_t>(x)];

        IterationRow row;
        row.iteration = t;
        row.shots_cumulative = rec.total_shots;
        row.loss = loss_fn ? loss_fn(theta) : 0.0;
        row.metric = metric_fn ? metric_fn(theta) : 0.0;
        rec.rows.push_back(row);

        double norm_sq = 0.0;
        std::vector<double> sigma(static_cast<std::size_t>(d));
        for (int x = 0; x < d; ++x) {
            norm_sq += chi[static_cast<std::size_t>(x)] * chi[static_cast<std::size_t>(x)];
            sigma[static_cast<std::size_t>(x)] = std::sqrt(std::max(0.0, xi[static_cast<std::size_t>(x)]));
        }
        // The cap is a per-component shot ceiling; convert to blocks so
        // optimizers with expensive blocks do not get a larger shot budget.
        const long long cap_blocks = std::max(cfg.s_min, cfg.per_component_shot_cap / s0);
        s = gcans_shots(sigma, norm_sq, cfg.alpha, cfg.lipschitz, cfg.s_min, cap_blocks);
        ++t;
    }
    rec.theta = std::move(theta);
    return rec;
}

// Shot-frugal optimizer: every gradient evaluation samples the full flattened
// (entry, operator term) expansion with weighted random sampling, so rarely
// weighted entries cost no shots unless drawn.
inline RunRecord refoqus_run(const LossSpec& spec, const ParamCircuit& circuit,
                             const OptimizerConfig& cfg, const MetricFn& metric_fn = nullptr,
                             ShotLedger* ledger = nullptr) {
    Rng rng(cfg.seed);
    std::vector<double> theta = detail::random_theta(circuit.n_params, rng);
    const long long s0 = min_block_size(spec, EstimatorMode::Gradient);
    auto eval = [&](const std::vector<double>& th, const std::vector<long long>& budgets) {
        switch (spec.kind) {
            case LossKind::Linear:
                return estimate_gradient_linear(spec, circuit, th, budgets, AllocationStrategy::WRS, rng, ledger);
            case LossKind::Mse:
                return estimate_gradient_mse(spec, circuit, th, budgets, AllocationStrategy::WRS, rng, ledger);
            default:
                return estimate_gradient_poly(spec, circuit, th, budgets, AllocationStrategy::WRS, rng, ledger);
        }
    };
    MetricFn loss_fn = [&](const std::vector<double>& th) { return exact_loss(spec, circuit, th); };
    return run_gcans_loop(circuit.n_params, std::move(theta), cfg, s0, eval, loss_fn, metric_fn);
}

namespace detail {

// Baseline gradient estimator: sweeps every dataset entry deterministically
// and randomizes only over the operator terms inside each entry. One block
// costs one +/- shot pair per entry (2N shots per block, per component).
inline GradientEstimate rosalin_gradient(const LossSpec& spec, const ParamCircuit& circuit,
                                         const std::vector<double>& theta,
                                         const std::vector<long long>& blocks_per_component,
                                         Rng& rng, ShotLedger* ledger) {
    if (spec.kind != LossKind::Linear)
        throw std::invalid_argument("rosalin_gradient: only linear losses are supported");
    const int d = circuit.n_params;
    const int n_entries = static_cast<int>(spec.entries.size());

    // Per-entry sampling distribution over operator terms.
    std::vector<std::vector<double>> probs(static_cast<std::size_t>(n_entries));
    for (int i = 0; i < n_entries; ++i) {
        std::vector<double> w;
        for (const auto& t : spec.terms[static_cast<std::size_t>(i)]) w.push_back(std::abs(t.coeff));
        probs[static_cast<std::size_t>(i)] = wrs_probabilities(w);
    }

    GradientEstimate est;
    est.g.assign(static_cast<std::size_t>(d), 0.0);
    est.S.assign(static_cast<std::size_t>(d), 0.0);
    est.shots_per_component.assign(static_cast<std::size_t>(d), 0);
    double worst_case = 0.0;
    for (const auto& flat : spec.flattened()) worst_case += std::abs(flat.q);

    for (int x = 0; x < d; ++x) {
        const long long blocks = blocks_per_component[static_cast<std::size_t>(x)];
        if (blocks < 1) throw std::invalid_argument("rosalin_gradient: need at least one block");
        EvolvedCache plus(spec, circuit, shifted_theta(theta, x, +1));
        EvolvedCache minus(spec, circuit, shifted_theta(theta, x, -1));
        std::vector<double> block_values;
        block_values.reserve(static_cast<std::size_t>(blocks));
        for (long long b = 0; b < blocks; ++b) {
            double xb = 0.0;
            for (int i = 0; i < n_entries; ++i) {
                std::discrete_distribution<int> pick(probs[static_cast<std::size_t>(i)].begin(),
                                                     probs[static_cast<std::size_t>(i)].end());
                const int j = pick(rng);
                const auto& wt = spec.terms[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                const double rp = sample_term(plus.get(i), wt.term, 1, rng, ledger)[0];
                const double rm = sample_term(minus.get(i), wt.term, 1, rng, ledger)[0];
                const double eps = probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                xb += spec.entries[static_cast<std::size_t>(i)].probability * (wt.coeff / eps) * 0.5 * (rp - rm);
            }
            block_values.push_back(xb);
            est.g[static_cast<std::size_t>(x)] += xb / static_cast<double>(blocks);
        }
        est.shots_per_component[static_cast<std::size_t>(x)] = 2LL * n_entries * blocks;
        if (blocks >= 2) {
            double mean = est.g[static_cast<std::size_t>(x)], var = 0.0;
            for (double v : block_values) var += (v - mean) * (v - mean);
            est.S[static_cast<std::size_t>(x)] = var / static_cast<double>(blocks - 1);
        } else {
            est.S[static_cast<std::size_t>(x)] = worst_case * worst_case;
        }
    }
    return est;
}

} // namespace detail

// Baseline run: same adaptive loop and shot rule, but every dataset entry is
// measured at every evaluation, so one full sweep costs 2N shots. The shot
// rule's recommendations are counted in shots while its variance statistic is
// per sweep — the baseline's original bookkeeping, and the reason its hard
// per-iteration floor dominates until the recommendation exceeds 2N.
inline RunRecord rosalin_run(const LossSpec& spec, const ParamCircuit& circuit,
                             const OptimizerConfig& cfg, const MetricFn& metric_fn = nullptr,
                             ShotLedger* ledger = nullptr) {
    Rng rng(cfg.seed);
    std::vector<double> theta = detail::random_theta(circuit.n_params, rng);
    const long long sweep = 2LL * static_cast<long long>(spec.entries.size());
    auto eval = [&](const std::vector<double>& th, const std::vector<long long>& budgets) {
        // At least two sweeps: the per-sweep variance estimate needs them.
        std::vector<long long> blocks(budgets.size());
        for (std::size_t x = 0; x < budgets.size(); ++x)
            blocks[x] = std::max<long long>(2, budgets[x] / sweep);
        return detail::rosalin_gradient(spec, circuit, th, blocks, rng, ledger);
    };
    MetricFn loss_fn = [&](const std::vector<double>& th) { return exact_loss(spec, circuit, th); };
    return run_gcans_loop(circuit.n_params, std::move(theta), cfg, 1, eval, loss_fn, metric_fn);
}

struct AdamConfig {
    double alpha = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long shots_per_circuit = 100; // shots for every (entry, term, shift) measurement
};

// Non-adaptive baseline: parameter-shift Adam with a fixed deterministic
// measurement sweep. Every iteration measures every (entry, operator term)
// pair at both shifts of every component.
inline RunRecord adam_run(const LossSpec& spec, const ParamCircuit& circuit,
                          const OptimizerConfig& cfg, const AdamConfig& adam,
                          const MetricFn& metric_fn = nullptr, ShotLedger* ledger = nullptr) {
    if (spec.kind != LossKind::Linear) throw std::invalid_argument("adam_run: only linear losses are supported");
    if (adam.shots_per_circuit < 1) throw std::invalid_argument("adam_run: shots_per_circuit must be >= 1");
    Rng rng(cfg.seed);
    const int d = circuit.n_params;
    std::vector<double> theta = detail::random_theta(d, rng);
    std::vector<double> m(static_cast<std::size_t>(d), 0.0), v(static_cast<std::size_t>(d), 0.0);
    const auto flat = spec.flattened();

    auto shifted_loss = [&](const std::vector<double>& th) {
        double val = spec.constant_offset;
        detail::EvolvedCache evolved(spec, circuit, th);
        for (const auto& f : flat) {
            const auto& wt = spec.terms[static_cast<std::size_t>(f.entry)][static_cast<std::size_t>(f.term)];
            const auto samples = sample_term(evolved.get(f.entry), wt.term, adam.shots_per_circuit, rng, ledger);
            double mean = 0.0;
            for (double r : samples) mean += r;
            val += f.q * mean / static_cast<double>(adam.shots_per_circuit);
        }
        return val;
    };

    RunRecord rec;
    long long t = 0;
    while (rec.total_shots < cfg.s_max && (cfg.max_iterations == 0 || t < cfg.max_iterations)) {
        std::vector<double> g(static_cast<std::size_t>(d));
        for (int x = 0; x < d; ++x) {
            const double lp = shifted_loss(shifted_theta(theta, x, +1));
            const double lm = shifted_loss(shifted_theta(theta, x, -1));
            g[static_cast<std::size_t>(x)] = 0.5 * (lp - lm);
        }
        rec.total_shots += adam.shots_per_circuit * static_cast<long long>(flat.size()) * 2 * d;

        const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t + 1));
        const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t + 1));
        for (int x = 0; x < d; ++x) {
            auto xi = static_cast<std::size_t>(x);
            m[xi] = adam.beta1 * m[xi] + (1.0 - adam.beta1) * g[xi];
            v[xi] = adam.beta2 * v[xi] + (1.0 - adam.beta2) * g[xi] * g[xi];
            theta[xi] -= adam.alpha * (m[xi] / c1) / (std::sqrt(v[xi] / c2) + adam.eps);
        }

        IterationRow row;
        row.iteration = t;
        row.shots_cumulative = rec.total_shots;
        row.loss = exact_loss(spec, circuit, theta);
        row.metric = metric_fn ? metric_fn(theta) : 0.0;
        rec.rows.push_back(row);
        ++t;
    }
    rec.theta = std::move(theta);
    return rec;
}

} // namespace shotopt
