#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shotopt/circuit.hpp"
#include "shotopt/lossspec.hpp"
#include "shotopt/rng.hpp"
#include "shotopt/simulator.hpp"

using namespace shotopt;

TEST_CASE("hardware-efficient ansatz parameter counts") {
    CHECK(build_hea(4, 2).n_params == 20);
    CHECK(build_hea(8, 2).n_params == 40);
    CHECK(build_hea(14, 2).n_params == 70);
    CHECK(build_hea(2, 1).n_params == 6);
    CHECK_THROWS_AS(build_hea(1, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_hea(4, 0), std::invalid_argument);
}

TEST_CASE("strongly entangling ansatz parameter counts") {
    CHECK(build_strongly_entangling(4, 3).n_params == 36);
    CHECK(build_strongly_entangling(2, 1).n_params == 6);
    CHECK_THROWS_AS(build_strongly_entangling(1, 1), std::invalid_argument);
}

TEST_CASE("builders are deterministic") {
    const ParamCircuit a = build_hea(5, 3), b = build_hea(5, 3);
    REQUIRE(a.gates.size() == b.gates.size());
    for (std::size_t i = 0; i < a.gates.size(); ++i) {
        CHECK(a.gates[i].kind == b.gates[i].kind);
        CHECK(a.gates[i].q0 == b.gates[i].q0);
        CHECK(a.gates[i].q1 == b.gates[i].q1);
        CHECK(a.gates[i].param == b.gates[i].param);
    }
}

TEST_CASE("shifted_theta shifts one component by pi/2") {
    const std::vector<double> theta{0.1, 0.2, 0.3};
    const auto up = shifted_theta(theta, 1, +1);
    CHECK(up[0] == 0.1);
    CHECK(up[1] == doctest::Approx(0.2 + std::numbers::pi / 2));
    CHECK(up[2] == 0.3);
    CHECK_THROWS_AS(shifted_theta(theta, 3, +1), std::out_of_range);
    CHECK_THROWS_AS(shifted_theta(theta, -1, -1), std::out_of_range);
}

namespace {

// Central finite differences on the exact loss, step 1e-5.
double fd_gradient(const LossSpec& spec, const ParamCircuit& c, std::vector<double> theta, int x) {
    const double h = 1e-5;
    theta[static_cast<std::size_t>(x)] += h;
    const double up = exact_loss(spec, c, theta);
    theta[static_cast<std::size_t>(x)] -= 2 * h;
    const double dn = exact_loss(spec, c, theta);
    return (up - dn) / (2 * h);
}

double shift_gradient(const LossSpec& spec, const ParamCircuit& c, const std::vector<double>& theta,
                      int x) {
    return 0.5 * (exact_loss(spec, c, shifted_theta(theta, x, +1)) -
                  exact_loss(spec, c, shifted_theta(theta, x, -1)));
}

} // namespace

TEST_CASE("parameter-shift rule matches finite differences on a 3-qubit HEA") {
    const ParamCircuit c = build_hea(3, 2);
    LossSpec spec = vqse_local_loss({{init_zero(3), 1.0, std::nullopt}}, 3);
    Rng rng(424242);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    std::vector<double> theta(static_cast<std::size_t>(c.n_params));
    for (auto& t : theta) t = u(rng);
    for (int x = 0; x < c.n_params; ++x)
        CHECK(std::abs(shift_gradient(spec, c, theta, x) - fd_gradient(spec, c, theta, x)) < 1e-4);
}

TEST_CASE("parameter-shift rule holds for Rz/Rot gates too") {
    const ParamCircuit c = build_strongly_entangling(2, 2);
    LossSpec spec = vqse_local_loss({{init_zero(2), 1.0, std::nullopt}}, 2);
    Rng rng(7);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    std::vector<double> theta(static_cast<std::size_t>(c.n_params));
    for (auto& t : theta) t = u(rng);
    for (int x = 0; x < c.n_params; ++x)
        CHECK(std::abs(shift_gradient(spec, c, theta, x) - fd_gradient(spec, c, theta, x)) < 1e-4);
}
