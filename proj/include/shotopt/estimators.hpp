#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "shotopt/lossspec.hpp"
#include "shotopt/sampling.hpp"
#include "shotopt/simulator.hpp"

namespace shotopt {

struct EstimateResult {
    double value = 0.0;
    double variance_of_single_shot = 0.0; // sample variance of the per-block random variable
    long long shots_used = 0;
};

struct GradientEstimate {
    std::vector<double> g;
    std::vector<double> S; // per-component single-block variances
    std::vector<long long> shots_per_component;
};

enum class EstimatorMode { Loss, Gradient };

// Degree-z U-statistic with the product kernel: the minimum-variance unbiased
// estimator for E[x]^z. Computed through the elementary symmetric polynomial
// recurrence in O(s*z).
inline double ustat_power(const std::vector<double>& samples, int z) {
    const int s = static_cast<int>(samples.size());
    if (z < 1) throw std::invalid_argument("ustat_power: degree must be >= 1");
    if (s < z) throw std::invalid_argument("ustat_power: need at least z samples");
    std::vector<double> e(static_cast<std::size_t>(z) + 1, 0.0);
    e[0] = 1.0;
    for (int i = 0; i < s; ++i) {
        const int top = std::min(z, i + 1);
        for (int t = top; t >= 1; --t) e[t] += e[t - 1] * samples[i];
    }
    double binom = 1.0;
    for (int t = 0; t < z; ++t) binom *= static_cast<double>(s - t) / static_cast<double>(t + 1);
    return e[z] / binom;
}

namespace detail {

// One term of the flattened estimator expansion: weight * [parameter-shift
// pair of grad_term] * prod_j <h_j>^power_j. Loss-mode terms carry no
// gradient factor. Identity (constant-offset) factors are folded into the
// weight and never consume shots.
struct ExpansionTerm {
    int entry = 0;
    double weight = 0.0;
    int grad_term = -1; // index into spec.terms[entry], -1 for loss-mode terms
    std::vector<std::pair<int, int>> factors; // (term index, power)

    long long min_shots() const {
        long long m = grad_term >= 0 ? 2 : 0;
        for (const auto& [j, b] : factors) m += b;
        return m;
    }
};

// Smallest factorial-ratio weights via doubles; degrees are capped at 4 so no
// precision concerns.
inline double factorial(int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

// Enumerates compositions (b_0..b_J) with sum z over J+1 slots; slot 0 is the
// identity term carrying the constant offset.
template <typename Fn>
inline void for_each_composition(int slots, int z, std::vector<int>& b, int pos, Fn&& fn) {
    if (pos == slots - 1) {
        b[pos] = z;
        fn(b);
        return;
    }
    for (int v = 0; v <= z; ++v) {
        b[pos] = v;
        for_each_composition(slots, z - v, b, pos + 1, fn);
    }
}

inline std::vector<ExpansionTerm> gradient_expansion(const LossSpec& spec) {
    std::vector<ExpansionTerm> out;
    const double offset = spec.constant_offset;
    for (int i = 0; i < static_cast<int>(spec.entries.size()); ++i) {
        const double p = spec.entries[i].probability;
        const auto& ts = spec.terms[i];
        const int nterms = static_cast<int>(ts.size());
        if (nterms == 0) continue;

        if (spec.kind == LossKind::Linear) {
            for (int j = 0; j < nterms; ++j)
                out.push_back({i, p * ts[j].coeff, j, {}});
        } else if (spec.kind == LossKind::Mse) {
            const double y = *spec.entries[i].label - offset;
            for (int j = 0; j < nterms; ++j) {
                if (y != 0.0) out.push_back({i, -2.0 * p * ts[j].coeff * y, j, {}});
                for (int jp = 0; jp < nterms; ++jp)
                    out.push_back({i, 2.0 * p * ts[j].coeff * ts[jp].coeff, j, {{jp, 1}}});
            }
        } else {
            if (nterms > 8) throw std::invalid_argument("gradient_expansion: at most 8 terms per entry");
            for (int z = 1; z <= spec.degree(); ++z) {
                const double az = spec.poly_coeffs[z];
                if (az == 0.0) continue;
                std::vector<int> b(static_cast<std::size_t>(nterms) + 1);
                for_each_composition(nterms + 1, z - 1, b, 0, [&](const std::vector<int>& comp) {
                    if (comp[0] > 0 && offset == 0.0) return;
                    double w = p * az * z * factorial(z - 1) * std::pow(offset, comp[0]);
                    std::vector<std::pair<int, int>> factors;
                    for (int j = 0; j < nterms; ++j) {
                        w /= factorial(comp[j + 1]);
                        w *= std::pow(ts[j].coeff, comp[j + 1]);
                        if (comp[j + 1] > 0) factors.push_back({j, comp[j + 1]});
                    }
                    w /= factorial(comp[0]);
                    if (w == 0.0) return;
                    for (int jp = 0; jp < nterms; ++jp)
                        out.push_back({i, w * ts[jp].coeff, jp, factors});
                });
            }
        }
    }
    return out;
}

// Loss-mode expansion; terms with no measurable factor are summed into
// *exact_part instead.
inline std::vector<ExpansionTerm> loss_expansion(const LossSpec& spec, double* exact_part) {
    std::vector<ExpansionTerm> out;
    *exact_part = 0.0;
    const double offset = spec.constant_offset;
    for (int i = 0; i < static_cast<int>(spec.entries.size()); ++i) {
        const double p = spec.entries[i].probability;
        const auto& ts = spec.terms[i];
        const int nterms = static_cast<int>(ts.size());

        if (spec.kind == LossKind::Linear) {
            *exact_part += p * offset;
            for (int j = 0; j < nterms; ++j)
                out.push_back({i, p * ts[j].coeff, -1, {{j, 1}}});
        } else if (spec.kind == LossKind::Mse) {
            const double y = *spec.entries[i].label - offset;
            *exact_part += p * y * y;
            for (int j = 0; j < nterms; ++j) {
                if (y != 0.0) out.push_back({i, -2.0 * p * y * ts[j].coeff, -1, {{j, 1}}});
                out.push_back({i, p * ts[j].coeff * ts[j].coeff, -1, {{j, 2}}});
                for (int jp = j + 1; jp < nterms; ++jp)
                    out.push_back({i, 2.0 * p * ts[j].coeff * ts[jp].coeff, -1, {{j, 1}, {jp, 1}}});
            }
        } else {
            if (nterms > 8) throw std::invalid_argument("loss_expansion: at most 8 terms per entry");
            for (int z = 0; z <= spec.degree(); ++z) {
                const double az = spec.poly_coeffs[z];
                if (az == 0.0) continue;
                if (z == 0) {
                    *exact_part += p * az;
                    continue;
                }
                std::vector<int> b(static_cast<std::size_t>(nterms) + 1);
                for_each_composition(nterms + 1, z, b, 0, [&](const std::vector<int>& comp) {
                    if (comp[0] > 0 && offset == 0.0) return;
                    double w = p * az * factorial(z) * std::pow(offset, comp[0]) / factorial(comp[0]);
                    std::vector<std::pair<int, int>> factors;
                    for (int j = 0; j < nterms; ++j) {
                        w /= factorial(comp[j + 1]);
                        w *= std::pow(ts[j].coeff, comp[j + 1]);
                        if (comp[j + 1] > 0) factors.push_back({j, comp[j + 1]});
                    }
                    if (w == 0.0) return;
                    if (factors.empty()) {
                        *exact_part += w;
                    } else {
                        out.push_back({i, w, -1, std::move(factors)});
                    }
                });
            }
        }
    }
    return out;
}

inline std::vector<double> gradient_expansion_magnitudes(const LossSpec& spec) {
    std::vector<double> mags;
    for (const auto& t : gradient_expansion(spec)) mags.push_back(std::abs(t.weight));
    return mags;
}

// Caches evolved dataset states for one parameter binding.
class EvolvedCache {
  public:
    EvolvedCache(const LossSpec& spec, const ParamCircuit& circuit, std::vector<double> theta)
        : spec_(spec), circuit_(circuit), theta_(std::move(theta)) {}

    const StateVector& get(int entry) {
        auto it = cache_.find(entry);
        if (it == cache_.end())
            it = cache_.emplace(entry, apply_circuit(spec_.entries[entry].state, circuit_, theta_)).first;
        return it->second;
    }

  private:
    const LossSpec& spec_;
    const ParamCircuit& circuit_;
    std::vector<double> theta_;
    std::map<int, StateVector> cache_;
};

// Shared blockwise estimation core. Splits the budget into blocks of s0
// shots, draws block counts per expansion term with the given strategy,
// and evaluates one unbiased product estimate per block:
//   Y = [parameter-shift pair] * prod_j ustat_power(samples_j, b_j).
// Every slot of a block (+ shift, - shift, each product factor) draws from
// its own derived stream; factors never share a shot. The returned pair is
// (sum over blocks of w_t Y / E[n_t], per-block sample variance), plus used
// shots via *shots_used.
struct BlockCoreResult {
    double value = 0.0;
    double block_variance = 0.0;
    long long shots_used = 0;
    long long blocks = 0;
};

inline BlockCoreResult run_block_core(const LossSpec& spec, const ParamCircuit& circuit,
                                      const std::vector<ExpansionTerm>& terms, long long budget,
                                      long long s0, AllocationStrategy strategy,
                                      EvolvedCache* unshifted, EvolvedCache* plus,
                                      EvolvedCache* minus, std::uint64_t stream_base, Rng& rng,
                                      ShotLedger* ledger) {
    BlockCoreResult result;
    if (terms.empty()) return result;
    if (budget < s0) throw std::invalid_argument("estimator: budget below the minimum block size");

    std::vector<double> weights;
    weights.reserve(terms.size());
    for (const auto& t : terms) weights.push_back(std::abs(t.weight));

    const long long blocks = budget / s0;
    const long long remainder = budget % s0;
    const ShotTable table = allocate(blocks, weights, strategy, 1, rng);
    const std::vector<double> expected = expected_shots(blocks, weights, strategy, 1);

    std::vector<double> block_values;
    block_values.reserve(static_cast<std::size_t>(blocks));

    long long global_block = 0; // term-major block index, used for remainder absorption
    for (std::size_t t = 0; t < terms.size(); ++t) {
        const long long n_t = table.shots[t];
        if (n_t == 0) continue;
        const ExpansionTerm& term = terms[t];
        const auto& entry_terms = spec.terms[term.entry];

        // Slot layout: [grad+, grad-] then one slot per product factor.
        const bool has_grad = term.grad_term >= 0;
        const int n_factor_slots = static_cast<int>(term.factors.size());
        const int n_slots = (has_grad ? 2 : 0) + n_factor_slots;
        std::vector<long long> base_mins(n_slots, 0);
        int slot = 0;
        if (has_grad) {
            base_mins[slot++] = 1;
            base_mins[slot++] = 1;
        }
        for (const auto& [j, b] : term.factors) base_mins[slot++] = b;

        // Per-block slot shot counts: the mandatory minimum plus the block's
        // spare shots (s0 - min, and one absorbed leftover shot for the first
        // `remainder` blocks), spread round-robin over the slots.
        std::vector<std::vector<long long>> slot_shots(
            static_cast<std::size_t>(n_t), std::vector<long long>(base_mins.begin(), base_mins.end()));
        std::vector<long long> slot_totals(n_slots, 0);
        for (long long b = 0; b < n_t; ++b) {
            long long spare = s0 - term.min_shots() + ((global_block + b) < remainder ? 1 : 0);
            for (long long k = 0; spare > 0; ++k, --spare)
                slot_shots[static_cast<std::size_t>(b)][static_cast<std::size_t>(k % n_slots)]++;
            for (int sidx = 0; sidx < n_slots; ++sidx)
                slot_totals[sidx] += slot_shots[static_cast<std::size_t>(b)][static_cast<std::size_t>(sidx)];
        }

        // One independent stream per (term, slot); all of a slot's samples
        // for this term are drawn in a single pass over the prepared state.
        std::vector<std::vector<double>> samples(n_slots);
        slot = 0;
        if (has_grad) {
            const MeasurableTerm& h = entry_terms[term.grad_term].term;
            Rng rp = make_stream(stream_base, {t, 0});
            Rng rm = make_stream(stream_base, {t, 1});
            samples[slot++] = sample_term(plus->get(term.entry), h, slot_totals[0], rp, ledger);
            samples[slot++] = sample_term(minus->get(term.entry), h, slot_totals[1], rm, ledger);
        }
        for (int f = 0; f < n_factor_slots; ++f) {
            const MeasurableTerm& h = entry_terms[term.factors[f].first].term;
            Rng rs = make_stream(stream_base, {t, static_cast<std::uint64_t>(2 + f)});
            samples[slot] = sample_term(unshifted->get(term.entry), h, slot_totals[slot], rs, ledger);
            ++slot;
        }

        std::vector<long long> cursor(n_slots, 0);
        const double norm = term.weight / expected[t];
        for (long long b = 0; b < n_t; ++b) {
            double y = 1.0;
            slot = 0;
            if (has_grad) {
                double sum_p = 0.0, sum_m = 0.0;
                const long long np = slot_shots[static_cast<std::size_t>(b)][0];
                const long long nm = slot_shots[static_cast<std::size_t>(b)][1];
                for (long long k = 0; k < np; ++k) sum_p += samples[0][static_cast<std::size_t>(cursor[0]++)];
                for (long long k = 0; k < nm; ++k) sum_m += samples[1][static_cast<std::size_t>(cursor[1]++)];
                y *= 0.5 * (sum_p / np - sum_m / nm);
                slot = 2;
            }
            for (int f = 0; f < n_factor_slots; ++f, ++slot) {
                const long long ns = slot_shots[static_cast<std::size_t>(b)][static_cast<std::size_t>(slot)];
                std::vector<double> xs(samples[slot].begin() + cursor[slot],
                                       samples[slot].begin() + cursor[slot] + ns);
                cursor[slot] += ns;
                y *= ustat_power(xs, term.factors[f].second);
            }
            result.value += norm * y;
            block_values.push_back(static_cast<double>(blocks) * norm * y);
        }
        global_block += n_t;
    }

    result.blocks = blocks;
    result.shots_used = blocks * s0 + remainder;
    if (block_values.size() >= 2) {
        double mean = 0.0;
        for (double v : block_values) mean += v;
        mean /= static_cast<double>(block_values.size());
        double var = 0.0;
        for (double v : block_values) var += (v - mean) * (v - mean);
        result.block_variance = var / static_cast<double>(block_values.size() - 1);
    }
    return result;
}

} // namespace detail

// Minimum shots any sampled expansion term can need: 1 for linear loss
// estimation, 2 for linear gradients, the largest U-statistic degree for
// polynomial losses, 2 + max sum b_j for polynomial gradients, and 3 for MSE
// gradients.
inline long long min_block_size(const LossSpec& spec, EstimatorMode mode) {
    long long m = 1;
    if (mode == EstimatorMode::Loss) {
        double exact = 0.0;
        for (const auto& t : detail::loss_expansion(spec, &exact)) m = std::max(m, t.min_shots());
    } else {
        m = 2;
        for (const auto& t : detail::gradient_expansion(spec)) m = std::max(m, t.min_shots());
    }
    return m;
}

// Unbiased loss estimate: offset + sum_k q_k (1/E[s_k]) sum of single shots,
// with shots allocated by the chosen strategy (Wald's equation makes the
// randomized allocation unbiased).
inline EstimateResult estimate_loss_linear(const LossSpec& spec, const ParamCircuit& circuit,
                                           const std::vector<double>& theta, long long s_tot,
                                           AllocationStrategy strategy, Rng& rng,
                                           ShotLedger* ledger = nullptr) {
    if (spec.kind != LossKind::Linear) throw std::invalid_argument("estimate_loss_linear: spec is not linear");
    if (s_tot < 1) throw std::invalid_argument("estimate_loss_linear: need at least 1 shot");
    double exact = 0.0;
    const auto terms = detail::loss_expansion(spec, &exact);
    const std::uint64_t base = rng();
    detail::EvolvedCache evolved(spec, circuit, theta);
    const auto core = detail::run_block_core(spec, circuit, terms, s_tot, 1, strategy, &evolved,
                                             nullptr, nullptr, base, rng, ledger);
    return {exact + core.value, core.block_variance, core.shots_used};
}

// Unbiased polynomial-loss estimate via the multinomial expansion and
// product-kernel U-statistics on independent per-factor streams.
inline EstimateResult estimate_loss_poly(const LossSpec& spec, const ParamCircuit& circuit,
                                         const std::vector<double>& theta, long long s_tot,
                                         AllocationStrategy strategy, Rng& rng,
                                         ShotLedger* ledger = nullptr) {
    if (spec.kind == LossKind::Mse) throw std::invalid_argument("estimate_loss_poly: use estimate_loss_mse");
    double exact = 0.0;
    const auto terms = detail::loss_expansion(spec, &exact);
    const long long s0 = min_block_size(spec, EstimatorMode::Loss);
    const std::uint64_t base = rng();
    detail::EvolvedCache evolved(spec, circuit, theta);
    const auto core = detail::run_block_core(spec, circuit, terms, s_tot, s0, strategy, &evolved,
                                             nullptr, nullptr, base, rng, ledger);
    return {exact + core.value, core.block_variance, core.shots_used};
}

// Unbiased MSE loss estimate: sum p y^2 exact, linear terms sampled, cross
// terms via independent-stream products, square terms via the k != k' pair
// average (the degree-2 U-statistic).
inline EstimateResult estimate_loss_mse(const LossSpec& spec, const ParamCircuit& circuit,
                                        const std::vector<double>& theta, long long s_tot,
                                        AllocationStrategy strategy, Rng& rng,
                                        ShotLedger* ledger = nullptr) {
    if (spec.kind != LossKind::Mse) throw std::invalid_argument("estimate_loss_mse: spec is not MSE");
    double exact = 0.0;
    const auto terms = detail::loss_expansion(spec, &exact);
    const long long s0 = min_block_size(spec, EstimatorMode::Loss);
    const std::uint64_t base = rng();
    detail::EvolvedCache evolved(spec, circuit, theta);
    const auto core = detail::run_block_core(spec, circuit, terms, s_tot, s0, strategy, &evolved,
                                             nullptr, nullptr, base, rng, ledger);
    return {exact + core.value, core.block_variance, core.shots_used};
}

namespace detail {

inline GradientEstimate estimate_gradient_impl(const LossSpec& spec, const ParamCircuit& circuit,
                                               const std::vector<double>& theta,
                                               const std::vector<long long>& shots_per_component,
                                               AllocationStrategy strategy, Rng& rng,
                                               ShotLedger* ledger) {
    const int d = circuit.n_params;
    if (static_cast<int>(shots_per_component.size()) != d)
        throw std::invalid_argument("estimate_gradient: budget vector length mismatch");
    const auto terms = gradient_expansion(spec);
    const long long s0 = min_block_size(spec, EstimatorMode::Gradient);

    double worst_case = 0.0;
    for (const auto& t : terms) worst_case += std::abs(t.weight);

    GradientEstimate est;
    est.g.assign(d, 0.0);
    est.S.assign(d, 0.0);
    est.shots_per_component.assign(d, 0);
    const std::uint64_t base = rng();

    EvolvedCache unshifted(spec, circuit, theta);
    for (int x = 0; x < d; ++x) {
        if (terms.empty()) continue;
        if (shots_per_component[x] < s0)
            throw std::invalid_argument("estimate_gradient: per-component budget below minimum block size");
        EvolvedCache plus(spec, circuit, shifted_theta(theta, x, +1));
        EvolvedCache minus(spec, circuit, shifted_theta(theta, x, -1));
        const auto core = run_block_core(spec, circuit, terms, shots_per_component[x], s0, strategy,
                                         &unshifted, &plus, &minus,
                                         derive_seed(base, {static_cast<std::uint64_t>(x)}), rng, ledger);
        est.g[x] = core.value;
        est.S[x] = core.blocks >= 2 ? core.block_variance : worst_case * worst_case;
        est.shots_per_component[x] = core.shots_used;
    }
    return est;
}

} // namespace detail

// Parameter-shift gradient of a linear loss; per component the budget splits
// evenly between the + and - shifted estimators.
inline GradientEstimate estimate_gradient_linear(const LossSpec& spec, const ParamCircuit& circuit,
                                                 const std::vector<double>& theta,
                                                 const std::vector<long long>& shots_per_component,
                                                 AllocationStrategy strategy, Rng& rng,
                                                 ShotLedger* ledger = nullptr) {
    if (spec.kind != LossKind::Linear)
        throw std::invalid_argument("estimate_gradient_linear: spec is not linear");
    return detail::estimate_gradient_impl(spec, circuit, theta, shots_per_component, strategy, rng, ledger);
}

// Gradient of a polynomial loss via the multinomial expansion: each sampled
// term pairs a parameter-shift factor with U-statistic product factors on
// fresh streams.
inline GradientEstimate estimate_gradient_poly(const LossSpec& spec, const ParamCircuit& circuit,
                                               const std::vector<double>& theta,
                                               const std::vector<long long>& shots_per_component,
                                               AllocationStrategy strategy, Rng& rng,
                                               ShotLedger* ledger = nullptr) {
    if (spec.kind == LossKind::Mse)
        throw std::invalid_argument("estimate_gradient_poly: use estimate_gradient_mse");
    return detail::estimate_gradient_impl(spec, circuit, theta, shots_per_component, strategy, rng, ledger);
}

// MSE gradient: samples the -2 p c y d<h> and 2 p c c' <h'> d<h> expansion
// terms, the latter via D = (1/2) E_{j'} (E+_j - E-_j) on independent
// streams.
inline GradientEstimate estimate_gradient_mse(const LossSpec& spec, const ParamCircuit& circuit,
                                              const std::vector<double>& theta,
                                              const std::vector<long long>& shots_per_component,
                                              AllocationStrategy strategy, Rng& rng,
                                              ShotLedger* ledger = nullptr) {
    if (spec.kind != LossKind::Mse)
        throw std::invalid_argument("estimate_gradient_mse: spec is not MSE");
    return detail::estimate_gradient_impl(spec, circuit, theta, shots_per_component, strategy, rng, ledger);
}

// Mean and covariance of the per-term shot counts for a strategy, used by the
// analytic variance formula. WDS/UDS are deterministic (zero covariance); WRS
// and the random part of WHS follow multinomial moments.
struct AllocationMoments {
    std::vector<double> mean;
    Eigen::MatrixXd cov;
};

inline AllocationMoments allocation_moments(long long s_tot, const std::vector<double>& weights,
                                            AllocationStrategy strategy, long long s0) {
    AllocationMoments m;
    m.mean = expected_shots(s_tot, weights, strategy, s0);
    const int k = static_cast<int>(weights.size());
    m.cov = Eigen::MatrixXd::Zero(k, k);
    if (strategy == AllocationStrategy::WRS || strategy == AllocationStrategy::WHS) {
        const auto probs = wrs_probabilities(weights);
        long long random_blocks = s_tot / s0;
        if (strategy == AllocationStrategy::WHS) {
            long long assigned = 0;
            for (int i = 0; i < k; ++i)
                assigned += static_cast<long long>(std::floor(static_cast<double>(random_blocks) * probs[i]));
            random_blocks -= assigned;
        }
        const double n = static_cast<double>(random_blocks);
        const double scale = static_cast<double>(s0) * static_cast<double>(s0);
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                m.cov(a, b) = scale * (a == b ? n * probs[a] * (1.0 - probs[a]) : -n * probs[a] * probs[b]);
    }
    return m;
}

// Exact variance of the linear-loss estimator:
//   Var = sum q^2 sigma^2 / E[s] + sum q q' <h><h'> Cov[s, s'] / (E[s] E[s']).
inline double analytic_variance_linear(const LossSpec& spec, const ParamCircuit& circuit,
                                       const std::vector<double>& theta,
                                       const AllocationMoments& moments) {
    if (spec.kind != LossKind::Linear)
        throw std::invalid_argument("analytic_variance_linear: spec is not linear");
    const auto flat = spec.flattened();
    if (moments.mean.size() != flat.size())
        throw std::invalid_argument("analytic_variance_linear: moments/terms mismatch");

    std::vector<double> h(flat.size()), h2(flat.size());
    detail::EvolvedCache evolved(spec, circuit, theta);
    for (std::size_t k = 0; k < flat.size(); ++k) {
        if (moments.mean[k] <= 0.0)
            throw std::domain_error("analytic_variance_linear: zero expected shots for a weighted term");
        const auto& wt = spec.terms[flat[k].entry][flat[k].term];
        const StateVector& state = evolved.get(flat[k].entry);
        h[k] = expectation(state, wt.term);
        MeasurableTerm squared = wt.term;
        for (auto& f : squared.factors)
            if (f == Factor::X || f == Factor::Y || f == Factor::Z) f = Factor::I;
        h2[k] = expectation(state, squared);
    }

    double var = 0.0;
    for (std::size_t k = 0; k < flat.size(); ++k)
        var += flat[k].q * flat[k].q * (h2[k] - h[k] * h[k]) / moments.mean[k];
    for (std::size_t a = 0; a < flat.size(); ++a)
        for (std::size_t b = 0; b < flat.size(); ++b)
            var += flat[a].q * flat[b].q * h[a] * h[b] *
                   moments.cov(static_cast<int>(a), static_cast<int>(b)) /
                   (moments.mean[a] * moments.mean[b]);
    return var;
}

// Inverse binomial sampling: draw Bernoulli trials until the first success;
// the harmonic partial sum H_{K-1} is an unbiased estimate of -ln p.
inline std::pair<double, long long> ibs_neg_log_likelihood(const std::function<int(Rng&)>& sampler,
                                                           Rng& rng, long long cap = 10'000'000) {
    double value = 0.0;
    for (long long k = 1; k <= cap; ++k) {
        if (sampler(rng) != 0) return {value, k};
        value += 1.0 / static_cast<double>(k);
    }
    throw std::runtime_error("ibs_neg_log_likelihood: no success within the draw cap (p ~ 0)");
}

} // namespace shotopt
