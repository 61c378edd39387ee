#pragma once

// Sampling-based feasibility certification of a safety index with a
// Beta-posterior bound on the fraction of feasible states.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "additive_solver.hpp"
#include "mathkit.hpp"
#include "model.hpp"
#include "multiplicative_solver.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "safety.hpp"

namespace mmrssa {

enum class SolverKind { additive, multiplicative };

inline const char* to_string(SolverKind k) { return k == SolverKind::additive ? "additive" : "multiplicative"; }

inline SolverKind parse_solver_kind(const std::string& s) {
  if (s == "additive") return SolverKind::additive;
  if (s == "multiplicative") return SolverKind::multiplicative;
  throw std::invalid_argument("unknown solver '" + s + "' (expected additive or multiplicative)");
}

/// Everything a feasibility query needs besides the state and the index.
struct FeasibilitySetup {
  const MultiModalModel* model = nullptr;
  GammaSpec gamma{};
  SolverKind solver = SolverKind::multiplicative;
  double eps_f = 0.01;
  double eps0 = 1e-6;
  MultiplicativeOptions multiplicative{};
};

struct FeasibilityOutcome {
  bool feasible = false;
  std::string cause;  // empty when feasible
};

/// True iff the selected solver finds a control meeting the chance constraint.
template <SafetyIndexLike Index>
FeasibilityOutcome state_is_feasible(std::span<const double> x, const Index& index, const FeasibilitySetup& setup) {
  if (!setup.model) throw std::invalid_argument("state_is_feasible: no model");
  try {
    const ModeList modes = setup.model->eval(x);
    const SafetyEval se = index.evaluate(x);
    // Any u serves for a feasibility query; the box centre avoids biasing the solver.
    const ControlBox& box = setup.model->box();
    Vector u_ref(box.size());
    for (std::size_t j = 0; j < u_ref.size(); ++j) u_ref[j] = 0.5 * (box.lower[j] + box.upper[j]);
    SafeControlResult r;
    if (setup.solver == SolverKind::additive) {
      AdditiveOptions ao{setup.eps_f, setup.eps0};
      r = solve_additive_at(modes, se, u_ref, box, setup.gamma, ao);
    } else {
      MultiplicativeOptions mo = setup.multiplicative;
      mo.eps_f = setup.eps_f;
      mo.feasibility_only = true;
      r = solve_multiplicative_at(modes, se, u_ref, box, setup.gamma, mo);
    }
    if (r.status == SolveStatus::infeasible_relaxed) return {false, r.cause};
    return {true, {}};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

/// Axis-aligned sampling box over states; lower == upper pins a coordinate.
struct StateRegion {
  Vector lower;
  Vector upper;

  void validate() const {
    if (lower.size() != upper.size() || lower.empty()) throw DimensionError("StateRegion: bounds size");
    for (std::size_t a = 0; a < lower.size(); ++a)
      if (!(lower[a] <= upper[a])) throw std::invalid_argument("StateRegion: lower > upper");
  }
};

/// The Segway certification region: p pinned, tilt ±0.2, both rates ±3.
inline StateRegion segway_region() { return {{0.0, -0.2, -3.0, -3.0}, {0.0, 0.2, 3.0, 3.0}}; }

/// State i of a seeded uniform sample; independent of how many are drawn.
inline Vector uniform_state(const StateRegion& region, std::uint64_t seed, std::uint64_t i) {
  Rng rng = make_stream(seed, i);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector x(region.lower.size());
  for (std::size_t a = 0; a < x.size(); ++a) x[a] = region.lower[a] + unif(rng) * (region.upper[a] - region.lower[a]);
  return x;
}

inline std::vector<Vector> uniform_states(const StateRegion& region, std::size_t n, std::uint64_t seed) {
  region.validate();
  std::vector<Vector> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = uniform_state(region, seed, i);
  return out;
}

struct SampleOutcome {
  Vector state;
  bool feasible = false;
  std::string cause;
};

struct FeasibilityCounts {
  std::size_t n_feasible = 0;
  std::size_t n_infeasible = 0;
  std::vector<SampleOutcome> samples;  // in input order
};

/// Feasibility of every state in `states`. Results do not depend on `threads`.
template <SafetyIndexLike Index>
FeasibilityCounts check_states(const std::vector<Vector>& states, const Index& index, const FeasibilitySetup& setup,
                               unsigned threads = 0, bool keep_samples = true) {
  std::vector<FeasibilityOutcome> outcome(states.size());
  parallel_for(states.size(), threads, [&](std::size_t i) { outcome[i] = state_is_feasible(states[i], index, setup); });
  FeasibilityCounts c;
  for (std::size_t i = 0; i < states.size(); ++i) {
    (outcome[i].feasible ? c.n_feasible : c.n_infeasible) += 1;
    if (keep_samples) c.samples.push_back({states[i], outcome[i].feasible, std::move(outcome[i].cause)});
  }
  return c;
}

/// Uniform sampling over `region`.
template <SafetyIndexLike Index>
FeasibilityCounts sample_feasibility(const StateRegion& region, std::size_t n, std::uint64_t seed, const Index& index,
                                     const FeasibilitySetup& setup, unsigned threads = 0, bool keep_samples = true) {
  if (n == 0) throw std::invalid_argument("sample_feasibility: N must be at least 1");
  return check_states(uniform_states(region, n, seed), index, setup, threads, keep_samples);
}

/// Beta(N_f + α, N_n + β) density of the feasible fraction q at z.
inline double posterior_density(double z, double n_feasible, double n_infeasible, double alpha = 1.0,
                                double beta = 1.0) {
  if (!(z > 0.0 && z < 1.0)) throw DomainError("posterior_density: z must lie in (0,1)");
  const double a = n_feasible + alpha, b = n_infeasible + beta;
  return std::exp((a - 1.0) * std::log(z) + (b - 1.0) * std::log1p(-z) - detail::log_beta(a, b));
}

/// P(q > z_target) under the posterior.
inline double prob_at_least(double z_target, double n_feasible, double n_infeasible, double alpha = 1.0,
                            double beta = 1.0) {
  if (!(z_target >= 0.0 && z_target <= 1.0)) throw DomainError("prob_at_least: z_target must lie in [0,1]");
  // 1 − I_z(a, b) = I_{1−z}(b, a), evaluated directly to keep the small tail accurate.
  return reg_inc_beta(1.0 - z_target, n_infeasible + beta, n_feasible + alpha);
}

struct FeasibilityCertificate {
  std::size_t n_feasible = 0;
  std::size_t n_infeasible = 0;
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  double z_target = 0.9999;
  double confidence = 0.0;  // P(q > z_target)

  double posterior_a() const { return static_cast<double>(n_feasible) + prior_alpha; }
  double posterior_b() const { return static_cast<double>(n_infeasible) + prior_beta; }
};

inline FeasibilityCertificate make_certificate(std::size_t n_feasible, std::size_t n_infeasible, double z_target,
                                               double alpha = 1.0, double beta = 1.0) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("certificate: prior parameters must be positive");
  FeasibilityCertificate c{n_feasible, n_infeasible, alpha, beta, z_target, 0.0};
  c.confidence = prob_at_least(z_target, static_cast<double>(n_feasible), static_cast<double>(n_infeasible), alpha, beta);
  return c;
}

}  // namespace mmrssa
