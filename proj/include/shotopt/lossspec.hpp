#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "shotopt/simulator.hpp"

namespace shotopt {

struct DatasetEntry {
    StateVector state;
    double probability = 1.0;
    std::optional<double> label;
};

struct WeightedTerm {
    double coeff = 0.0;
    MeasurableTerm term;
};

enum class LossKind { Linear, Polynomial, Mse };

// Loss over a dataset of pure states: L = sum_i p_i * ell(E_i(theta)) with
// E_i(theta) = constant_offset + sum_j c_{i,j} <h_{i,j}(theta)>. Identity
// contributions live in constant_offset and never consume shots. For the MSE
// kind, ell(E) = (y_i - E)^2 with per-entry labels; otherwise ell is the
// shared polynomial sum_z a_z E^z (a = {0, 1} for linear losses).
struct LossSpec {
    LossKind kind = LossKind::Linear;
    std::vector<DatasetEntry> entries;
    std::vector<std::vector<WeightedTerm>> terms; // aligned with entries
    double constant_offset = 0.0;
    std::vector<double> poly_coeffs{0.0, 1.0}; // a_0 .. a_D

    int degree() const { return static_cast<int>(poly_coeffs.size()) - 1; }
    int n_qubits() const { return entries.empty() ? 0 : entries.front().state.n_qubits; }

    // Flattened q_{i,j} = p_i * c_{i,j}, entry-major then term-major. This
    // order fixes the multinomial weights used by every sampling strategy.
    struct FlatTerm {
        int entry;
        int term;
        double q;
    };
    std::vector<FlatTerm> flattened() const {
        std::vector<FlatTerm> out;
        for (int i = 0; i < static_cast<int>(entries.size()); ++i)
            for (int j = 0; j < static_cast<int>(terms[i].size()); ++j)
                out.push_back({i, j, entries[i].probability * terms[i][j].coeff});
        return out;
    }
};

namespace detail {

inline void validate_entries(const std::vector<DatasetEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("loss spec: empty dataset");
    double psum = 0.0;
    for (const auto& e : entries) {
        if (e.probability <= 0.0) throw std::domain_error("loss spec: probabilities must be positive");
        psum += e.probability;
    }
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::domain_error("loss spec: probabilities must sum to 1");
}

// Drops zero-coefficient terms and checks finiteness.
inline std::vector<WeightedTerm> clean_terms(std::vector<WeightedTerm> terms) {
    std::vector<WeightedTerm> out;
    for (auto& t : terms) {
        if (!std::isfinite(t.coeff)) throw std::domain_error("loss spec: non-finite coefficient");
        if (t.coeff != 0.0) out.push_back(std::move(t));
    }
    return out;
}

} // namespace detail

// Generic linear loss: L = offset + sum_{i,j} p_i c_{i,j} <h_{i,j}>.
inline LossSpec linear_loss(std::vector<DatasetEntry> entries,
                            std::vector<std::vector<WeightedTerm>> terms_per_entry,
                            double constant_offset = 0.0) {
    detail::validate_entries(entries);
    if (terms_per_entry.size() != entries.size())
        throw std::invalid_argument("linear_loss: term list / entry count mismatch");
    LossSpec spec;
    spec.kind = LossKind::Linear;
    spec.entries = std::move(entries);
    for (auto& t : terms_per_entry) spec.terms.push_back(detail::clean_terms(std::move(t)));
    spec.constant_offset = constant_offset;
    spec.poly_coeffs = {0.0, 1.0};
    return spec;
}

// Shared polynomial loss ell(E) = sum_z a_z E^z applied to every entry.
inline LossSpec polynomial_loss(std::vector<DatasetEntry> entries,
                                std::vector<std::vector<WeightedTerm>> terms_per_entry,
                                std::vector<double> poly_coeffs, double constant_offset = 0.0) {
    if (poly_coeffs.size() < 2 || poly_coeffs.size() > 5)
        throw std::invalid_argument("polynomial_loss: degree must be in [1, 4]");
    LossSpec spec = linear_loss(std::move(entries), std::move(terms_per_entry), constant_offset);
    for (const auto& ts : spec.terms)
        if (ts.size() > 8) throw std::invalid_argument("polynomial_loss: at most 8 terms per entry");
    spec.kind = poly_coeffs.size() == 2 ? LossKind::Linear : LossKind::Polynomial;
    spec.poly_coeffs = std::move(poly_coeffs);
    return spec;
}

// VQSE local cost H = 1 - sum_j r_j Z_j with r_j = 1.0 + 0.2 (j-1).
inline LossSpec vqse_local_loss(std::vector<DatasetEntry> entries, int n_qubits) {
    detail::validate_entries(entries);
    std::vector<WeightedTerm> terms;
    for (int j = 0; j < n_qubits; ++j) {
        const double r = 1.0 + 0.2 * j;
        terms.push_back({-r, single_factor_term(n_qubits, j, Factor::Z)});
    }
    std::vector<std::vector<WeightedTerm>> per_entry(entries.size(), terms);
    return linear_loss(std::move(entries), std::move(per_entry), 1.0);
}

// Autoencoder local cost H = 1 - (1/n_B) sum_{j in trash} P0_j; trash qubits
// are the last n_trash indices.
inline LossSpec autoencoder_local_loss(std::vector<DatasetEntry> entries, int n_qubits,
                                       int n_trash) {
    if (n_trash < 1 || n_trash >= n_qubits)
        throw std::invalid_argument("autoencoder_local_loss: n_trash must be in [1, n_qubits)");
    detail::validate_entries(entries);
    std::vector<WeightedTerm> terms;
    for (int j = n_qubits - n_trash; j < n_qubits; ++j)
        terms.push_back({-1.0 / n_trash, single_factor_term(n_qubits, j, Factor::P0)});
    std::vector<std::vector<WeightedTerm>> per_entry(entries.size(), terms);
    return linear_loss(std::move(entries), std::move(per_entry), 1.0);
}

// Autoencoder global cost H = 1 - 1_A (x) |0..0><0..0|_B.
inline LossSpec autoencoder_global_loss(std::vector<DatasetEntry> entries, int n_qubits,
                                        int n_trash) {
    if (n_trash < 1 || n_trash >= n_qubits)
        throw std::invalid_argument("autoencoder_global_loss: n_trash must be in [1, n_qubits)");
    detail::validate_entries(entries);
    MeasurableTerm proj = identity_term(n_qubits);
    for (int j = n_qubits - n_trash; j < n_qubits; ++j) proj.factors[j] = Factor::P0;
    std::vector<std::vector<WeightedTerm>> per_entry(entries.size(),
                                                     std::vector<WeightedTerm>{{-1.0, proj}});
    return linear_loss(std::move(entries), std::move(per_entry), 1.0);
}

// Weighted MSE: L = sum_i p_i [y_i - sum_j c_{i,j} <h_{i,j}>]^2.
inline LossSpec mse_loss(std::vector<DatasetEntry> entries,
                         std::vector<std::vector<WeightedTerm>> terms_per_entry) {
    for (const auto& e : entries)
        if (!e.label) throw std::invalid_argument("mse_loss: every entry needs a label");
    LossSpec spec = linear_loss(std::move(entries), std::move(terms_per_entry), 0.0);
    spec.kind = LossKind::Mse;
    spec.poly_coeffs = {0.0, 0.0, 1.0}; // degree-2 dependence on E_i
    return spec;
}

// Exact E_i(theta), including the constant offset.
inline double exact_entry_expectation(const LossSpec& spec, int entry, const ParamCircuit& circuit,
                                      const std::vector<double>& theta) {
    const StateVector evolved = apply_circuit(spec.entries[entry].state, circuit, theta);
    double e = spec.constant_offset;
    for (const auto& t : spec.terms[entry]) e += t.coeff * expectation(evolved, t.term);
    return e;
}

// Zero-noise oracle: sum_i p_i ell(E_i(theta)) with exact expectations.
inline double exact_loss(const LossSpec& spec, const ParamCircuit& circuit,
                         const std::vector<double>& theta) {
    double loss = 0.0;
    for (int i = 0; i < static_cast<int>(spec.entries.size()); ++i) {
        const double e = exact_entry_expectation(spec, i, circuit, theta);
        double ell;
        if (spec.kind == LossKind::Mse) {
            const double y = *spec.entries[i].label;
            ell = (y - e) * (y - e);
        } else {
            ell = 0.0;
            double ez = 1.0;
            for (double a : spec.poly_coeffs) {
                ell += a * ez;
                ez *= e;
            }
        }
        loss += spec.entries[i].probability * ell;
    }
    return loss;
}

namespace detail {
// Expansion-term weights of the gradient estimator; forward declaration so
// lipschitz_bound can reuse the enumeration from the estimators module.
std::vector<double> gradient_expansion_magnitudes(const LossSpec& spec);
} // namespace detail

// L = sum |q_{i,j}| for linear specs; for polynomial/MSE specs the same
// formula over the flattened expansion coefficients of the gradient
// estimator. The constant offset never contributes.
inline double lipschitz_bound(const LossSpec& spec) {
    if (spec.kind == LossKind::Linear) {
        double sum = 0.0;
        for (const auto& f : spec.flattened()) sum += std::abs(f.q);
        return sum;
    }
    double sum = 0.0;
    for (double w : detail::gradient_expansion_magnitudes(spec)) sum += std::abs(w);
    return sum;
}

} // namespace shotopt
