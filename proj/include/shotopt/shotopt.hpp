#pragma once

#include "shotopt/bench.hpp"
#include "shotopt/circuit.hpp"
#include "shotopt/estimators.hpp"
#include "shotopt/lossspec.hpp"
#include "shotopt/optimizers.hpp"
#include "shotopt/rng.hpp"
#include "shotopt/sampling.hpp"
#include "shotopt/simulator.hpp"
