#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace shotopt {

// Gate set: Pauli-generated rotations (so the parameter-shift rule applies),
// fixed-angle Ry, and the parameter-free entanglers CZ / CNOT.
enum class GateKind { Ry, RyFixed, Rz, Rot, Cz, Cnot };

struct Gate {
    GateKind kind;
    int q0 = 0;          // target qubit (or control for Cz/Cnot)
    int q1 = -1;         // second qubit for two-qubit gates
    int param = -1;      // parameter index for Ry/Rz
    std::array<int, 3> rot_params{-1, -1, -1}; // Rz,Ry,Rz parameter indices for Rot
    double angle = 0.0;  // fixed angle for RyFixed
};

// Ordered gate sequence with independent parametrization: each parameterized
// rotation consumes exactly one parameter index.
struct ParamCircuit {
    int n_qubits = 0;
    int n_params = 0;
    std::vector<Gate> gates;
};

inline Gate ry(int q, int param) { return Gate{GateKind::Ry, q, -1, param}; }
inline Gate ry_fixed(int q, double angle) {
    Gate g{GateKind::RyFixed, q};
    g.angle = angle;
    return g;
}
inline Gate rz(int q, int param) { return Gate{GateKind::Rz, q, -1, param}; }
inline Gate rot(int q, int p0, int p1, int p2) {
    Gate g{GateKind::Rot, q};
    g.rot_params = {p0, p1, p2};
    return g;
}
inline Gate cz(int c, int t) { return Gate{GateKind::Cz, c, t}; }
inline Gate cnot(int c, int t) { return Gate{GateKind::Cnot, c, t}; }

// Hardware-efficient ansatz: per layer, an Ry column on every qubit, CZ
// entanglers on (0,1),(2,3),..., a second Ry column, CZ entanglers on
// (1,2),(3,4),... plus the wrap pair (0, n-1); one final Ry column after the
// last layer. Parameter count is 2*n*layers + n (20/40/70 for n=4/8/14 at
// 2 layers).
inline ParamCircuit build_hea(int n_qubits, int layers) {
    if (n_qubits < 2) throw std::invalid_argument("build_hea: need at least 2 qubits");
    if (layers < 1) throw std::invalid_argument("build_hea: need at least 1 layer");
    ParamCircuit c;
    c.n_qubits = n_qubits;
    int p = 0;
    auto ry_column = [&] {
        for (int q = 0; q < n_qubits; ++q) c.gates.push_back(ry(q, p++));
    };
    for (int l = 0; l < layers; ++l) {
        ry_column();
        for (int q = 0; q + 1 < n_qubits; q += 2) c.gates.push_back(cz(q, q + 1));
        ry_column();
        for (int q = 1; q + 1 < n_qubits; q += 2) c.gates.push_back(cz(q, q + 1));
        c.gates.push_back(cz(0, n_qubits - 1));
    }
    ry_column();
    c.n_params = p;
    return c;
}

// Per layer: a general Rot (Rz.Ry.Rz, three parameters) on every qubit, then a
// ring of CNOTs with range r = (layer mod (n-1)) + 1. 3*n*layers parameters.
inline ParamCircuit build_strongly_entangling(int n_qubits, int layers) {
    if (n_qubits < 2) throw std::invalid_argument("build_strongly_entangling: need at least 2 qubits");
    if (layers < 1) throw std::invalid_argument("build_strongly_entangling: need at least 1 layer");
    ParamCircuit c;
    c.n_qubits = n_qubits;
    int p = 0;
    for (int l = 0; l < layers; ++l) {
        for (int q = 0; q < n_qubits; ++q) {
            c.gates.push_back(rot(q, p, p + 1, p + 2));
            p += 3;
        }
        const int range = (l % (n_qubits - 1)) + 1;
        for (int q = 0; q < n_qubits; ++q)
            c.gates.push_back(cnot(q, (q + range) % n_qubits));
    }
    c.n_params = p;
    return c;
}

// Copy of theta with theta[x] shifted by sign * pi/2.
inline std::vector<double> shifted_theta(const std::vector<double>& theta, int x, int sign) {
    if (x < 0 || x >= static_cast<int>(theta.size()))
        throw std::out_of_range("shifted_theta: parameter index out of range");
    std::vector<double> out = theta;
    out[x] += sign * std::numbers::pi / 2.0;
    return out;
}

} // namespace shotopt
