#pragma once

// Least-conservative chance-constrained safe control under multi-modal
// additive uncertainty: binary search over the reference mode's sigma
// multiplier for the confidence allocation, then a box-constrained projection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mathkit.hpp"
#include "model.hpp"
#include "safety.hpp"

namespace mmrssa {

enum class SolveStatus { optimal, reference_feasible, infeasible_relaxed };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::reference_feasible: return "reference-feasible";
    case SolveStatus::infeasible_relaxed: return "infeasible-relaxed";
  }
  return "unknown";
}

/// Confidence assigned to one mode.
struct ModeAllocation {
  double k = 0.0;         // sigma multiplier on the drift bound
  double p = 0.0;         // probability credited to this mode
  double offset = 0.0;    // o(x,θ_i,k_i)
  bool enforced = true;   // false: mode dropped from the constraint (p = 0)
};

/// Aggregated halfspace a·u ≤ b in control space.
struct AdditiveConstraint {
  Vector a;
  double b = 0.0;
  std::vector<ModeAllocation> per_mode;
  double achieved = 0.0;  // Σ P(θ_i) p_i
  int iterations = 0;
};

struct SafeControlResult {
  Vector u;
  std::vector<ModeAllocation> allocation;
  double achieved_probability = 0.0;
  double slack = 0.0;        // constraint value minus bound at u; ≤ 0 when satisfied
  double objective = 0.0;    // ‖u − u_ref‖²
  SolveStatus status = SolveStatus::optimal;
  std::vector<double> history;  // accepted upper-level objectives (multiplicative solver)
  std::string cause;
};

class BracketExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateMode : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdditiveOptions {
  double eps_f = 0.01;
  double eps0 = 1e-6;
  double k_max = 10.0;
  bool allow_short = false;  // return the most conservative allocation instead of throwing when the target is unreachable
};

/// p(k) = χ²₁ CDF at k², the mass within ±kσ.
inline double confidence_of_k(double k) { return k <= 0.0 ? 0.0 : chi2_cdf(k * k, 1); }

/// o(x,θ,k) = −∇φ·μ_f − k·ρ with ρ the support of the 1σ ellipsoid along ∇φ.
inline double mode_offset(const ModeParams& mode, double k, std::span<const double> grad) {
  return -dot(grad, mode.mu_f) - k * ellipsoid_support(grad, mode.sigma_f);
}

namespace detail {

struct ModeProjection {
  double weight;
  double base;  // −∇φ·μ_f
  double rho;
};

inline std::vector<ModeProjection> project_modes(const ModeList& modes, std::span<const double> grad) {
  std::vector<ModeProjection> out;
  out.reserve(modes.size());
  for (const auto& md : modes) out.push_back({md.weight, -dot(grad, md.mu_f), ellipsoid_support(grad, md.sigma_f)});
  return out;
}

// Allocation that puts every enforceable mode's offset at `level`.
inline std::vector<ModeAllocation> allocate_at_level(const std::vector<ModeProjection>& pm, double level,
                                                     double& achieved) {
  std::vector<ModeAllocation> out(pm.size());
  achieved = 0.0;
  for (std::size_t i = 0; i < pm.size(); ++i) {
    const auto& m = pm[i];
    ModeAllocation& a = out[i];
    if (m.rho > 0.0) {
      const double k = (m.base - level) / m.rho;
      if (k < 0.0) {
        // Mean already beyond the level: credit nothing and drop the mode.
        a = {0.0, 0.0, m.base, false};
      } else {
        a = {k, confidence_of_k(k), level, true};
      }
    } else {
      // Deterministic mode: holds surely if implied by the level, else dropped.
      a = m.base >= level ? ModeAllocation{0.0, 1.0, m.base, true} : ModeAllocation{0.0, 0.0, m.base, false};
    }
    achieved += m.weight * a.p;
  }
  return out;
}

}  // namespace detail

/// Sigma multipliers that equalize every mode's offset with mode `ref`'s
/// offset at multiplier k1. Negative solutions are clamped to 0.
inline std::vector<double> solve_k_chain(double k1, const ModeList& modes, std::span<const double> grad,
                                         std::size_t ref = 0) {
  if (k1 < 0.0) throw std::invalid_argument("solve_k_chain: k1 must be nonnegative");
  const auto pm = detail::project_modes(modes, grad);
  const double level = pm[ref].base - k1 * pm[ref].rho;
  std::vector<double> k(pm.size(), 0.0);
  for (std::size_t i = 0; i < pm.size(); ++i) {
    if (pm[i].rho > 0.0) {
      k[i] = std::max(0.0, (pm[i].base - level) / pm[i].rho);
    } else if (std::abs(pm[i].base - level) > 1e-12 * std::max(1.0, std::abs(level))) {
      throw DegenerateMode("solve_k_chain: mode " + std::to_string(i) +
                           " has zero spread along the gradient and its offset cannot be equalized");
    }
  }
  return k;
}

/// Least-conservative aggregated constraint ∇φ·g·u ≤ b meeting Σ P(θ_i)p_i ≥ 1 − eps_f.
///
/// Bisects the reference mode's multiplier k₁; the total credited probability
/// is nondecreasing in k₁, so the smallest admissible k₁ gives the largest
/// right-hand side. The bracket contains [0, k_max] and is widened so that its
/// ends reach every level an allocation with all k_i ≤ k_max can produce:
/// the loose end drops every mode, the conservative end puts every mode at or
/// beyond k_max. The allocation returned is the one at the conservative end
/// of the final bracket.
inline AdditiveConstraint binary_search_allocation(const ModeList& modes, std::span<const double> grad,
                                                   double gamma_val, const AdditiveOptions& opt = {}) {
  if (!(opt.eps_f > 0.0 && opt.eps_f < 1.0)) throw std::invalid_argument("eps_f must lie in (0,1)");
  if (!(opt.eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
  const double target = 1.0 - opt.eps_f;
  const auto pm = detail::project_modes(modes, grad);

  AdditiveConstraint out;
  out.a = modes.front().grad_times_mu_g(grad);

  const auto ref = std::find_if(pm.begin(), pm.end(), [](const auto& m) { return m.rho > 0.0; });
  if (ref == pm.end()) {
    // No mode has spread along ∇φ; the best level is the largest base whose
    // safer-side weight still meets the target.
    std::vector<double> bases;
    for (const auto& m : pm) bases.push_back(m.base);
    std::sort(bases.begin(), bases.end(), std::greater<>());
    double level = bases.back();
    for (double cand : bases) {
      double w = 0.0;
      for (const auto& m : pm)
        if (m.base >= cand) w += m.weight;
      if (w >= target) {
        level = cand;
        break;
      }
    }
    out.per_mode = detail::allocate_at_level(pm, level, out.achieved);
    if (out.achieved < target) throw BracketExhausted("deterministic modes cannot reach the probability target");
    out.b = level - gamma_val;
    return out;
  }

  const auto level_of = [&](double k1) { return ref->base - k1 * ref->rho; };
  double loosest = ref->base, tightest = level_of(opt.k_max);
  for (const auto& m : pm) {
    loosest = std::max(loosest, m.base);
    tightest = std::min(tightest, m.base - opt.k_max * m.rho);
  }
  double lo = (ref->base - loosest) / ref->rho, hi = (ref->base - tightest) / ref->rho;
  double achieved = 0.0;
  (void)detail::allocate_at_level(pm, level_of(hi), achieved);
  if (achieved < target) {
    if (!opt.allow_short) {
      throw BracketExhausted("binary_search_allocation: every mode at k = " + std::to_string(opt.k_max) +
                             " still cannot reach probability " + std::to_string(target));
    }
    out.per_mode = detail::allocate_at_level(pm, level_of(hi), out.achieved);
    out.b = level_of(hi) - gamma_val;
    return out;
  }

  while (hi - lo >= opt.eps0) {
    const double mid = 0.5 * (lo + hi);
    (void)detail::allocate_at_level(pm, level_of(mid), achieved);
    if (achieved >= target) hi = mid; else lo = mid;
    ++out.iterations;
  }
  const double level = level_of(hi);
  out.per_mode = detail::allocate_at_level(pm, level, out.achieved);
  out.b = level - gamma_val;
  return out;
}

/// Exact minimizer of ‖u − u_ref‖² over {a·u ≤ b} ∩ box.
///
/// Single-multiplier KKT: u(ν) = clip(u_ref − ν·a) and a·u(ν) is
/// nonincreasing in ν, so ν is bisected and then solved exactly on the final
/// set of unclipped coordinates.
struct ProjectionResult {
  Vector u;
  SolveStatus status = SolveStatus::optimal;
  double violation = 0.0;  // a·u − b
};

inline ProjectionResult project_halfspace_box(std::span<const double> u_ref, std::span<const double> a, double b,
                                              const ControlBox& box) {
  const std::size_t m = u_ref.size();
  if (a.size() != m || box.size() != m) throw DimensionError("project_halfspace_box: dimension mismatch");
  ProjectionResult r;
  r.u = box.clip(u_ref);
  if (dot(a, r.u) <= b) {
    r.status = SolveStatus::reference_feasible;
    r.violation = dot(a, r.u) - b;
    return r;
  }
  Vector u_min(m);
  for (std::size_t j = 0; j < m; ++j) u_min[j] = a[j] > 0.0 ? box.lower[j] : (a[j] < 0.0 ? box.upper[j] : r.u[j]);
  if (dot(a, u_min) > b) {
    r.u = u_min;
    r.status = SolveStatus::infeasible_relaxed;
    r.violation = dot(a, u_min) - b;
    return r;
  }
  auto u_of = [&](double nu) {
    Vector u(m);
    for (std::size_t j = 0; j < m; ++j) u[j] = std::clamp(u_ref[j] - nu * a[j], box.lower[j], box.upper[j]);
    return u;
  };
  double lo = 0.0, hi = 1.0;
  while (dot(a, u_of(hi)) > b) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dot(a, u_of(mid)) > b) lo = mid; else hi = mid;
  }
  // Exact ν on the active set found by the bisection.
  const double mid = 0.5 * (lo + hi);
  double fixed = 0.0, free_ref = 0.0, free_sq = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double v = u_ref[j] - mid * a[j];
    if (v <= box.lower[j] || v >= box.upper[j] || a[j] == 0.0) {
      fixed += a[j] * std::clamp(v, box.lower[j], box.upper[j]);
    } else {
      free_ref += a[j] * u_ref[j];
      free_sq += a[j] * a[j];
    }
  }
  double nu = hi;
  if (free_sq > 0.0) {
    const double exact = (fixed + free_ref - b) / free_sq;
    if (exact >= lo - 1e-12 && exact <= hi + 1e-12) nu = exact;
  }
  r.u = u_of(nu);
  if (dot(a, r.u) > b) r.u = u_of(hi);
  r.violation = dot(a, r.u) - b;
  return r;
}

/// Requires the actuation term to be deterministic and shared by all modes.
inline void require_additive(const ModeList& modes) {
  for (const auto& md : modes) {
    if (!md.sigma_g.empty() && md.sigma_g.max_abs() > 0.0)
      throw std::invalid_argument("additive solver: g must be deterministic (zero sigma_g)");
    if ((md.mu_g - modes.front().mu_g).max_abs() > 1e-12)
      throw std::invalid_argument("additive solver: mu_g must be identical across modes");
  }
}

/// Safe control from explicit mode data at one state.
inline SafeControlResult solve_additive_at(const ModeList& modes, const SafetyEval& se, std::span<const double> u_ref,
                                           const ControlBox& box, const GammaSpec& gamma,
                                           const AdditiveOptions& opt = {}) {
  require_additive(modes);
  SafeControlResult res;
  AdditiveConstraint con;
  try {
    con = binary_search_allocation(modes, se.grad, gamma_eval(se.value, gamma), opt);
  } catch (const BracketExhausted& e) {
    // Least-violating control for the most relaxed allocation the bracket allows.
    AdditiveOptions relaxed = opt;
    relaxed.allow_short = true;
    con = binary_search_allocation(modes, se.grad, gamma_eval(se.value, gamma), relaxed);
    const ProjectionResult pr = project_halfspace_box(u_ref, con.a, con.b, box);
    res.u = pr.u;
    res.allocation = con.per_mode;
    res.achieved_probability = con.achieved;
    res.slack = pr.violation;
    res.objective = squared_distance(res.u, u_ref);
    res.status = SolveStatus::infeasible_relaxed;
    res.cause = e.what();
    return res;
  }
  const ProjectionResult pr = project_halfspace_box(u_ref, con.a, con.b, box);
  res.u = pr.u;
  res.allocation = con.per_mode;
  res.achieved_probability = con.achieved;
  res.slack = pr.violation;
  res.objective = squared_distance(res.u, u_ref);
  res.status = pr.status;
  if (pr.status == SolveStatus::infeasible_relaxed) res.cause = "no control in the box satisfies the constraint";
  return res;
}

/// Safe control for `model` at state `x`.
template <SafetyIndexLike Index>
SafeControlResult solve_safe_control_additive(std::span<const double> x, std::span<const double> u_ref,
                                              const MultiModalModel& model, const Index& index,
                                              const GammaSpec& gamma, const AdditiveOptions& opt = {}) {
  return solve_additive_at(model.eval(x), index.evaluate(x), u_ref, model.box(), gamma, opt);
}

}  // namespace mmrssa
