#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "shotopt/circuit.hpp"
#include "shotopt/rng.hpp"

namespace shotopt {

using cplx = std::complex<double>;

inline constexpr int kMaxQubits = 14;

// Dense statevector, qubit 0 is the least significant bit of the amplitude
// index. Treated as immutable by every operation below.
struct StateVector {
    int n_qubits = 0;
    std::vector<cplx> amplitudes;

    std::size_t dim() const { return amplitudes.size(); }
};

// Tensor-product observable with one factor per qubit. Every factor is
// Hermitian with eigenvalues in {-1, 0, +1}, so single-shot outcomes are
// products of per-qubit eigenvalues.
enum class Factor : std::uint8_t { I, X, Y, Z, P0, P1 };

struct MeasurableTerm {
    std::vector<Factor> factors;

    int n_qubits() const { return static_cast<int>(factors.size()); }
};

inline MeasurableTerm identity_term(int n_qubits) {
    return MeasurableTerm{std::vector<Factor>(n_qubits, Factor::I)};
}

inline MeasurableTerm single_factor_term(int n_qubits, int qubit, Factor f) {
    MeasurableTerm t = identity_term(n_qubits);
    t.factors.at(qubit) = f;
    return t;
}

// Counts every shot drawn through sample_term, so optimizer ledgers can be
// checked against the simulator.
struct ShotLedger {
    std::uint64_t total = 0;
};

inline StateVector init_zero(int n_qubits) {
    if (n_qubits < 1 || n_qubits > kMaxQubits)
        throw std::invalid_argument("init_zero: n_qubits must be in [1, 14]");
    StateVector s;
    s.n_qubits = n_qubits;
    s.amplitudes.assign(std::size_t(1) << n_qubits, cplx(0.0, 0.0));
    s.amplitudes[0] = 1.0;
    return s;
}

namespace detail {

inline void apply_1q(std::vector<cplx>& a, int q, const std::array<cplx, 4>& m) {
    const std::size_t stride = std::size_t(1) << q;
    for (std::size_t base = 0; base < a.size(); base += 2 * stride) {
        for (std::size_t i = base; i < base + stride; ++i) {
            const cplx a0 = a[i];
            const cplx a1 = a[i + stride];
            a[i] = m[0] * a0 + m[1] * a1;
            a[i + stride] = m[2] * a0 + m[3] * a1;
        }
    }
}

inline std::array<cplx, 4> ry_matrix(double theta) {
    const double c = std::cos(theta / 2.0), s = std::sin(theta / 2.0);
    return {cplx(c), cplx(-s), cplx(s), cplx(c)};
}

inline std::array<cplx, 4> rz_matrix(double theta) {
    return {std::polar(1.0, -theta / 2.0), cplx(0.0), cplx(0.0), std::polar(1.0, theta / 2.0)};
}

inline void apply_cz(std::vector<cplx>& a, int c, int t) {
    const std::size_t cm = std::size_t(1) << c, tm = std::size_t(1) << t;
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((i & cm) && (i & tm)) a[i] = -a[i];
}

inline void apply_cnot(std::vector<cplx>& a, int c, int t) {
    const std::size_t cm = std::size_t(1) << c, tm = std::size_t(1) << t;
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((i & cm) && !(i & tm)) std::swap(a[i], a[i | tm]);
}

inline void check_qubit(int q, int n) {
    if (q < 0 || q >= n) throw std::invalid_argument("gate qubit index out of range");
}

inline void apply_gate(std::vector<cplx>& a, int n_qubits, const Gate& g,
                       const std::vector<double>& theta) {
    switch (g.kind) {
        case GateKind::Ry:
            check_qubit(g.q0, n_qubits);
            apply_1q(a, g.q0, ry_matrix(theta.at(g.param)));
            break;
        case GateKind::RyFixed:
            check_qubit(g.q0, n_qubits);
            apply_1q(a, g.q0, ry_matrix(g.angle));
            break;
        case GateKind::Rz:
            check_qubit(g.q0, n_qubits);
            apply_1q(a, g.q0, rz_matrix(theta.at(g.param)));
            break;
        case GateKind::Rot:
            check_qubit(g.q0, n_qubits);
            apply_1q(a, g.q0, rz_matrix(theta.at(g.rot_params[0])));
            apply_1q(a, g.q0, ry_matrix(theta.at(g.rot_params[1])));
            apply_1q(a, g.q0, rz_matrix(theta.at(g.rot_params[2])));
            break;
        case GateKind::Cz:
            check_qubit(g.q0, n_qubits);
            check_qubit(g.q1, n_qubits);
            if (g.q0 == g.q1) throw std::invalid_argument("two-qubit gate needs distinct qubits");
            apply_cz(a, g.q0, g.q1);
            break;
        case GateKind::Cnot:
            check_qubit(g.q0, n_qubits);
            check_qubit(g.q1, n_qubits);
            if (g.q0 == g.q1) throw std::invalid_argument("two-qubit gate needs distinct qubits");
            apply_cnot(a, g.q0, g.q1);
            break;
    }
}

// Per-qubit matrix of a measurable factor, for exact expectations.
inline std::array<cplx, 4> factor_matrix(Factor f) {
    const cplx i(0.0, 1.0);
    switch (f) {
        case Factor::I: return {cplx(1), cplx(0), cplx(0), cplx(1)};
        case Factor::X: return {cplx(0), cplx(1), cplx(1), cplx(0)};
        case Factor::Y: return {cplx(0), -i, i, cplx(0)};
        case Factor::Z: return {cplx(1), cplx(0), cplx(0), cplx(-1)};
        case Factor::P0: return {cplx(1), cplx(0), cplx(0), cplx(0)};
        case Factor::P1: return {cplx(0), cplx(0), cplx(0), cplx(1)};
    }
    throw std::logic_error("unreachable");
}

// Eigenvalue of a (basis-rotated) factor given the measured bit.
inline double factor_eigenvalue(Factor f, int bit) {
    switch (f) {
        case Factor::I: return 1.0;
        case Factor::X:
        case Factor::Y:
        case Factor::Z: return bit ? -1.0 : 1.0;
        case Factor::P0: return bit ? 0.0 : 1.0;
        case Factor::P1: return bit ? 1.0 : 0.0;
    }
    throw std::logic_error("unreachable");
}

} // namespace detail

// Returns U(theta)|psi>. Norm is preserved (all gates are unitary).
inline StateVector apply_circuit(const StateVector& state, const ParamCircuit& circuit,
                                 const std::vector<double>& theta) {
    if (state.n_qubits != circuit.n_qubits)
        throw std::invalid_argument("apply_circuit: state/circuit width mismatch");
    if (static_cast<int>(theta.size()) != circuit.n_params)
        throw std::invalid_argument("apply_circuit: theta length mismatch");
    StateVector out = state;
    for (const Gate& g : circuit.gates) detail::apply_gate(out.amplitudes, out.n_qubits, g, theta);
    return out;
}

// Exact <psi| h |psi> for a tensor-product term.
inline double expectation(const StateVector& state, const MeasurableTerm& term) {
    if (term.n_qubits() != state.n_qubits)
        throw std::invalid_argument("expectation: term/state width mismatch");
    std::vector<cplx> h_psi = state.amplitudes;
    for (int q = 0; q < state.n_qubits; ++q)
        if (term.factors[q] != Factor::I)
            detail::apply_1q(h_psi, q, detail::factor_matrix(term.factors[q]));
    cplx acc(0.0, 0.0);
    for (std::size_t i = 0; i < h_psi.size(); ++i)
        acc += std::conj(state.amplitudes[i]) * h_psi[i];
    return acc.real();
}

// Single-shot measurement samples of a term. X/Y factors are rotated to the Z
// basis (H, resp. H.S^dagger), one bitstring per shot is drawn from the Born
// distribution, and bits map to per-factor eigenvalues.
inline std::vector<double> sample_term(const StateVector& state, const MeasurableTerm& term,
                                       long long shots, Rng& rng, ShotLedger* ledger = nullptr) {
    if (term.n_qubits() != state.n_qubits)
        throw std::invalid_argument("sample_term: term/state width mismatch");
    if (shots < 0) throw std::invalid_argument("sample_term: negative shot count");
    if (ledger) ledger->total += static_cast<std::uint64_t>(shots);
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(shots));
    if (shots == 0) return samples;

    std::vector<cplx> rotated = state.amplitudes;
    static const std::array<cplx, 4> kH = {cplx(std::numbers::sqrt2 / 2), cplx(std::numbers::sqrt2 / 2),
                                           cplx(std::numbers::sqrt2 / 2), cplx(-std::numbers::sqrt2 / 2)};
    static const std::array<cplx, 4> kSdg = {cplx(1), cplx(0), cplx(0), cplx(0.0, -1.0)};
    for (int q = 0; q < state.n_qubits; ++q) {
        if (term.factors[q] == Factor::X) {
            detail::apply_1q(rotated, q, kH);
        } else if (term.factors[q] == Factor::Y) {
            detail::apply_1q(rotated, q, kSdg);
            detail::apply_1q(rotated, q, kH);
        }
    }

    std::vector<double> cum(rotated.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rotated.size(); ++i) {
        acc += std::norm(rotated[i]);
        cum[i] = acc;
    }
    const double total = cum.back();

    std::uniform_real_distribution<double> uni(0.0, total);
    for (long long s = 0; s < shots; ++s) {
        const double u = uni(rng);
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const std::size_t idx = static_cast<std::size_t>(it - cum.begin());
        double value = 1.0;
        for (int q = 0; q < state.n_qubits; ++q)
            value *= detail::factor_eigenvalue(term.factors[q], static_cast<int>((idx >> q) & 1));
        samples.push_back(value);
    }
    return samples;
}

// rho = sum_i p_i |psi_i><psi_i|.
inline Eigen::MatrixXcd density_from_ensemble(
    const std::vector<std::pair<StateVector, double>>& entries) {
    if (entries.empty()) throw std::invalid_argument("density_from_ensemble: empty ensemble");
    double psum = 0.0;
    for (const auto& [state, p] : entries) {
        if (p < 0.0) throw std::domain_error("density_from_ensemble: negative probability");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::domain_error("density_from_ensemble: probabilities must sum to 1");
    const Eigen::Index dim = static_cast<Eigen::Index>(entries.front().first.dim());
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(dim, dim);
    for (const auto& [state, p] : entries) {
        if (static_cast<Eigen::Index>(state.dim()) != dim)
            throw std::invalid_argument("density_from_ensemble: mixed state dimensions");
        Eigen::Map<const Eigen::VectorXcd> v(state.amplitudes.data(), dim);
        rho.noalias() += p * v * v.adjoint();
    }
    return rho;
}

// The m largest eigenvalues of rho, descending.
inline std::vector<double> exact_top_eigenvalues(const Eigen::MatrixXcd& rho, int m) {
    if (m < 0 || m > rho.rows()) throw std::invalid_argument("exact_top_eigenvalues: m out of range");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(rho, Eigen::EigenvaluesOnly);
    Eigen::VectorXd ev = solver.eigenvalues(); // ascending
    std::vector<double> out;
    out.reserve(m);
    for (int k = 0; k < m; ++k) out.push_back(std::clamp(ev(ev.size() - 1 - k), 0.0, 1.0));
    return out;
}

} // namespace shotopt
