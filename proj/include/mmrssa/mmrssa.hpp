#pragma once

// Umbrella header.

#include "mathkit.hpp"
#include "random.hpp"
#include "model.hpp"
#include "segway.hpp"
#include "safety.hpp"
#include "additive_solver.hpp"
#include "socp.hpp"
#include "multiplicative_solver.hpp"
#include "parallel.hpp"
#include "cert.hpp"
#include "cmaes.hpp"
#include "synthesis.hpp"
#include "sim.hpp"
#include "config.hpp"
#include "io.hpp"
