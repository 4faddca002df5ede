#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "shotopt/rng.hpp"

namespace shotopt {

enum class AllocationStrategy { UDS, WDS, WRS, WHS };

// Integer shot counts aligned with the flattened q_{i,j} enumeration.
struct ShotTable {
    std::vector<long long> shots;
    long long total = 0;
};

// eps_k = |w_k| / sum |w|.
inline std::vector<double> wrs_probabilities(const std::vector<double>& weights) {
    double sum = 0.0;
    for (double w : weights) sum += std::abs(w);
    if (sum <= 0.0) throw std::domain_error("wrs_probabilities: all weights are zero");
    std::vector<double> probs(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) probs[k] = std::abs(weights[k]) / sum;
    return probs;
}

namespace detail {

// Deterministic remainder: round-robin, one shot per term from index 0.
inline void add_remainder(std::vector<long long>& shots, long long remainder) {
    const long long k = static_cast<long long>(shots.size());
    const long long each = remainder / k, extra = remainder % k;
    for (long long i = 0; i < k; ++i) shots[i] += each + (i < extra ? 1 : 0);
}

inline std::vector<long long> multinomial(long long n, const std::vector<double>& probs, Rng& rng) {
    std::vector<long long> counts(probs.size(), 0);
    long long remaining = n;
    double prob_left = 1.0;
    for (std::size_t k = 0; k + 1 < probs.size() && remaining > 0; ++k) {
        const double p = std::clamp(probs[k] / prob_left, 0.0, 1.0);
        std::binomial_distribution<long long> bin(remaining, p);
        const long long c = bin(rng);
        counts[k] = c;
        remaining -= c;
        prob_left -= probs[k];
        if (prob_left <= 0.0) break;
    }
    counts.back() += remaining;
    return counts;
}

// Largest-fractional-part rounding of n*probs, lowest index wins ties.
inline std::vector<long long> proportional_floor(long long n, const std::vector<double>& probs) {
    std::vector<long long> counts(probs.size());
    std::vector<std::pair<double, std::size_t>> frac;
    long long assigned = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double exact = n * probs[k];
        counts[k] = static_cast<long long>(std::floor(exact));
        assigned += counts[k];
        frac.push_back({exact - std::floor(exact), k});
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long long r = 0; r < n - assigned; ++r) counts[frac[static_cast<std::size_t>(r)].second]++;
    return counts;
}

} // namespace detail

// Distributes s_tot shots over terms in blocks of s0. The block counts follow
// the strategy; the s_tot mod s0 leftover goes round-robin, one per term.
inline ShotTable allocate(long long s_tot, const std::vector<double>& weights,
                          AllocationStrategy strategy, long long s0, Rng& rng) {
    if (s_tot < 0) throw std::invalid_argument("allocate: negative budget");
    if (s0 < 1) throw std::invalid_argument("allocate: s0 must be >= 1");
    if (weights.empty()) throw std::invalid_argument("allocate: no terms");
    const long long blocks = s_tot / s0;
    const long long remainder = s_tot % s0;
    const std::size_t k = weights.size();
    std::vector<long long> block_counts(k, 0);

    switch (strategy) {
        case AllocationStrategy::UDS: {
            const long long each = blocks / static_cast<long long>(k);
            const long long extra = blocks % static_cast<long long>(k);
            for (std::size_t i = 0; i < k; ++i)
                block_counts[i] = each + (static_cast<long long>(i) < extra ? 1 : 0);
            break;
        }
        case AllocationStrategy::WDS:
            block_counts = detail::proportional_floor(blocks, wrs_probabilities(weights));
            break;
        case AllocationStrategy::WRS:
            block_counts = detail::multinomial(blocks, wrs_probabilities(weights), rng);
            break;
        case AllocationStrategy::WHS: {
            const auto probs = wrs_probabilities(weights);
            long long assigned = 0;
            for (std::size_t i = 0; i < k; ++i) {
                block_counts[i] = static_cast<long long>(std::floor(blocks * probs[i]));
                assigned += block_counts[i];
            }
            const auto extra = detail::multinomial(blocks - assigned, probs, rng);
            for (std::size_t i = 0; i < k; ++i) block_counts[i] += extra[i];
            break;
        }
    }

    ShotTable table;
    table.shots.resize(k);
    for (std::size_t i = 0; i < k; ++i) table.shots[i] = block_counts[i] * s0;
    if (remainder > 0) detail::add_remainder(table.shots, remainder);
    table.total = std::accumulate(table.shots.begin(), table.shots.end(), 0LL);
    return table;
}

// Analytic E[s_k] for an allocation; estimator denominators must use this,
// never the realized counts.
inline std::vector<double> expected_shots(long long s_tot, const std::vector<double>& weights,
                                          AllocationStrategy strategy, long long s0) {
    if (s_tot < 0 || s0 < 1 || weights.empty()) throw std::invalid_argument("expected_shots: bad arguments");
    const long long blocks = s_tot / s0;
    const long long remainder = s_tot % s0;
    const std::size_t k = weights.size();
    std::vector<double> expected(k, 0.0);

    switch (strategy) {
        case AllocationStrategy::UDS: {
            const long long each = blocks / static_cast<long long>(k);
            const long long extra = blocks % static_cast<long long>(k);
            for (std::size_t i = 0; i < k; ++i)
                expected[i] = static_cast<double>((each + (static_cast<long long>(i) < extra ? 1 : 0)) * s0);
            break;
        }
        case AllocationStrategy::WDS: {
            const auto counts = detail::proportional_floor(blocks, wrs_probabilities(weights));
            for (std::size_t i = 0; i < k; ++i) expected[i] = static_cast<double>(counts[i] * s0);
            break;
        }
        case AllocationStrategy::WRS: {
            const auto probs = wrs_probabilities(weights);
            for (std::size_t i = 0; i < k; ++i)
                expected[i] = static_cast<double>(blocks) * static_cast<double>(s0) * probs[i];
            break;
        }
        case AllocationStrategy::WHS: {
            const auto probs = wrs_probabilities(weights);
            long long assigned = 0;
            std::vector<long long> det(k);
            for (std::size_t i = 0; i < k; ++i) {
                det[i] = static_cast<long long>(std::floor(blocks * probs[i]));
                assigned += det[i];
            }
            for (std::size_t i = 0; i < k; ++i)
                expected[i] = static_cast<double>(det[i] * s0) +
                              static_cast<double>(blocks - assigned) * probs[i] * static_cast<double>(s0);
            break;
        }
    }

    if (remainder > 0) {
        const long long each = remainder / static_cast<long long>(k);
        const long long extra = remainder % static_cast<long long>(k);
        for (std::size_t i = 0; i < k; ++i)
            expected[i] += static_cast<double>(each + (static_cast<long long>(i) < extra ? 1 : 0));
    }
    return expected;
}

} // namespace shotopt
