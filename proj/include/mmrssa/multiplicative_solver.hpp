#pragma once

// Chance-constrained safe control when g is uncertain too. Lower level: one
// second-order cone per mode, solved by solve_socp. Upper level: projected
// gradient over the per-mode confidences on the face Σ P(θ_i) p_i = 1 − eps_f.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "additive_solver.hpp"
#include "mathkit.hpp"
#include "model.hpp"
#include "safety.hpp"
#include "socp.hpp"

namespace mmrssa {

struct MultiplicativeOptions {
  double eps_f = 0.01;
  double p_floor = 0.5;
  double p_ceil = 1.0 - 1e-6;
  double fd_h = 1e-4;
  double backtrack = 0.5;
  double armijo_c = 1e-4;
  int max_iter = 50;
  double step_tol = 1e-5;
  double init_eps0 = 1e-10;   // bisection width for the equalized-k start
  bool feasibility_only = false;
  SocpOptions socp{};
};

/// Confidence split between the f-bound and the g-bound of one mode.
/// Both get √p unless one side carries no uncertainty along ∇φ, in which
/// case the other side takes all of p.
struct ConfidenceSplit {
  double p_f;
  double p_g;
};

inline ConfidenceSplit split_confidence(double p, double rho, const Matrix& g_quad) {
  const bool g_certain = g_quad.empty() || g_quad.max_abs() == 0.0;
  if (g_certain) return {p, 1.0};
  if (rho == 0.0) return {1.0, p};
  const double s = std::sqrt(p);
  return {s, s};
}

/// ‖Lᵀu‖ ≤ −μᵀu + c for one mode at confidence p.
inline SocConstraint build_soc_constraint(const ModeParams& mode, double p, std::span<const double> grad,
                                          double gamma_val, const NumericPolicy& policy = {}) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("build_soc_constraint: p must lie in (0,1)");
  const double rho = ellipsoid_support(grad, mode.sigma_f);
  Matrix q = mode.g_quadratic_form(grad);
  const ConfidenceSplit sp = split_confidence(p, rho, q);
  const std::size_t m = mode.m();

  SocConstraint con;
  con.mu = mode.grad_times_mu_g(grad);
  if (sp.p_g < 1.0) {
    q *= chi2_quantile(sp.p_g, static_cast<int>(mode.n() * m));
    con.L = cholesky(q, policy);
  } else {
    con.L = Matrix(m, m);
  }
  const double k_f = sp.p_f < 1.0 ? std::sqrt(chi2_quantile(sp.p_f, 1)) : 0.0;
  con.c = -gamma_val - dot(grad, mode.mu_f) - k_f * rho;
  return con;
}

namespace detail {

// Euclidean projection onto {Σ w_i p_i = target, lo ≤ p_i ≤ hi}:
// p(λ) = clip(q − λw) with λ found by bisection.
inline Vector project_to_face(std::span<const double> q, std::span<const double> w, double target, double lo,
                              double hi) {
  auto at = [&](double lam) {
    Vector p(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) p[i] = std::clamp(q[i] - lam * w[i], lo, hi);
    return p;
  };
  auto mass = [&](const Vector& p) { return dot(w, p); };
  double a = -1.0, b = 1.0;
  while (mass(at(a)) < target && a > -1e12) a *= 2.0;
  while (mass(at(b)) > target && b < 1e12) b *= 2.0;
  for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
    const double mid = 0.5 * (a + b);
    if (mass(at(mid)) > target) a = mid; else b = mid;
  }
  return at(0.5 * (a + b));
}

struct LowerLevel {
  const ModeList& modes;  // modes with positive weight only
  std::span<const double> grad;
  double gamma_val;
  std::span<const double> u_ref;
  const ControlBox& box;
  const SocpOptions& socp;

  std::vector<SocConstraint> constraints(std::span<const double> p) const {
    std::vector<SocConstraint> out;
    out.reserve(modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) out.push_back(build_soc_constraint(modes[i], p[i], grad, gamma_val));
    return out;
  }
  SocpResult solve(std::span<const double> p, bool feasibility_only = false) const {
    const auto cons = constraints(p);
    SocpOptions o = socp;
    o.feasibility_only = feasibility_only;
    return solve_socp(u_ref, cons, box, o);
  }
};

// Objective used by the upper level: the SOCP objective in phase B, the
// Phase-I violation in phase A.
inline double upper_objective(const LowerLevel& ll, std::span<const double> p, bool phase_a) {
  const SocpResult r = ll.solve(p, phase_a);
  if (phase_a) return r.feasible ? std::min(r.max_violation, 0.0) : r.max_violation;
  return r.feasible ? r.objective : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Bi-level safe control from explicit mode data at one state.
inline SafeControlResult solve_multiplicative_at(const ModeList& all_modes, const SafetyEval& se,
                                                 std::span<const double> u_ref, const ControlBox& box,
                                                 const GammaSpec& gamma, const MultiplicativeOptions& opt = {}) {
  if (!(opt.eps_f > 0.0 && opt.eps_f < 1.0)) throw std::invalid_argument("eps_f must lie in (0,1)");
  if (!(opt.p_floor > 0.0 && opt.p_floor < opt.p_ceil && opt.p_ceil < 1.0))
    throw std::invalid_argument("multiplicative solver: need 0 < p_floor < p_ceil < 1");
  const double target = 1.0 - opt.eps_f;
  const double gamma_val = gamma_eval(se.value, gamma);

  // Zero-weight modes cannot affect the probability sum; they get no constraint.
  ModeList modes;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < all_modes.size(); ++i)
    if (all_modes[i].weight > 0.0) {
      modes.push_back(all_modes[i]);
      index.push_back(i);
    }
  Vector w;
  for (const auto& md : modes) w.push_back(md.weight);
  const double w_total = std::accumulate(w.begin(), w.end(), 0.0);
  if (target > opt.p_ceil * w_total)
    throw std::invalid_argument("multiplicative solver: eps_f below the reachable probability floor");

  const detail::LowerLevel ll{modes, se.grad, gamma_val, u_ref, box, opt.socp};
  const bool fixed_face = target <= opt.p_floor * w_total;  // every p at the floor already suffices

  // Equalized-k start, ignoring the g uncertainty.
  Vector p(modes.size(), target);
  if (fixed_face) {
    std::fill(p.begin(), p.end(), opt.p_floor);
  } else {
    try {
      AdditiveOptions ao;
      ao.eps_f = opt.eps_f;
      ao.eps0 = opt.init_eps0;
      const AdditiveConstraint ac = binary_search_allocation(modes, se.grad, 0.0, ao);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = ac.per_mode[i].p;
    } catch (const BracketExhausted&) {
    }
    p = detail::project_to_face(p, w, target, opt.p_floor, opt.p_ceil);
  }

  SafeControlResult res;
  auto finish = [&](const SocpResult& r, const Vector& pv) {
    const auto cons = ll.constraints(pv);
    res.u = r.u;
    res.objective = squared_distance(r.u, u_ref);
    res.slack = max_residual(cons, r.u);
    res.achieved_probability = dot(w, pv);
    res.allocation.assign(all_modes.size(), ModeAllocation{0.0, 0.0, 0.0, false});
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const ConfidenceSplit sp = split_confidence(pv[i], ellipsoid_support(se.grad, modes[i].sigma_f),
                                                  modes[i].g_quadratic_form(se.grad));
      const double k = sp.p_f < 1.0 ? std::sqrt(chi2_quantile(sp.p_f, 1)) : 0.0;
      res.allocation[index[i]] = {k, pv[i], cons[i].c, true};
    }
  };

  const int dim_free = fixed_face || modes.size() < 2 ? 0 : static_cast<int>(modes.size());

  // Projected-gradient descent of `objective` over the face starting at p.
  // Returns the accepted objective history.
  auto descend = [&](bool phase_a, Vector& pv, double f0) {
    std::vector<double> hist{f0};
    if (dim_free == 0) return hist;
    double f = f0;
    double step = -1.0;
    for (int it = 0; it < opt.max_iter; ++it) {
      if (phase_a && f <= 0.0) break;
      if (!phase_a && f == 0.0) break;
      Vector g(pv.size(), 0.0);
      for (std::size_t i = 0; i < pv.size(); ++i) {
        Vector hi = pv, lo = pv;
        hi[i] = std::min(pv[i] + opt.fd_h, opt.p_ceil);
        lo[i] = std::max(pv[i] - opt.fd_h, opt.p_floor);
        const double fh = detail::upper_objective(ll, hi, phase_a);
        const double fl = detail::upper_objective(ll, lo, phase_a);
        if (std::isfinite(fh) && std::isfinite(fl) && hi[i] > lo[i]) {
          g[i] = (fh - fl) / (hi[i] - lo[i]);
        } else if (std::isfinite(fh) && hi[i] > pv[i]) {
          g[i] = (fh - f) / (hi[i] - pv[i]);
        } else if (std::isfinite(fl) && pv[i] > lo[i]) {
          g[i] = (f - fl) / (pv[i] - lo[i]);
        }
      }
      const double gn = norm(g);
      if (!(gn > 0.0)) break;
      if (step < 0.0) step = 0.1 / gn;
      bool accepted = false;
      double moved = 0.0;
      for (int ls = 0; ls < 60; ++ls) {
        Vector q(pv.size());
        for (std::size_t i = 0; i < pv.size(); ++i) q[i] = pv[i] - step * g[i];
        const Vector trial = detail::project_to_face(q, w, target, opt.p_floor, opt.p_ceil);
        Vector d(pv.size());
        for (std::size_t i = 0; i < pv.size(); ++i) d[i] = pv[i] - trial[i];
        moved = norm(d);
        if (moved < opt.step_tol) break;
        const double ft = detail::upper_objective(ll, trial, phase_a);
        if (std::isfinite(ft) && ft <= f - opt.armijo_c * dot(g, d) && ft <= f) {
          pv = trial;
          f = ft;
          hist.push_back(f);
          accepted = true;
          break;
        }
        step *= opt.backtrack;
      }
      if (!accepted || moved < opt.step_tol) break;
      step *= 2.0;
    }
    return hist;
  };

  SocpResult r = ll.solve(p, opt.feasibility_only);
  if (!r.feasible) {
    // Phase A: reduce the Phase-I violation over the face.
    (void)descend(true, p, r.max_violation);
    r = ll.solve(p, opt.feasibility_only);
    if (!r.feasible) {
      finish(r, p);
      res.status = SolveStatus::infeasible_relaxed;
      res.cause = "no confidence allocation on the face admits a feasible control";
      return res;
    }
  }
  if (opt.feasibility_only) {
    finish(r, p);
    res.status = SolveStatus::optimal;
    return res;
  }
  res.history = descend(false, p, r.objective);
  r = ll.solve(p);
  finish(r, p);
  const Vector clipped = box.clip(u_ref);
  res.status = squared_distance(r.u, clipped) == 0.0 ? SolveStatus::reference_feasible : SolveStatus::optimal;
  return res;
}

/// Bi-level safe control for `model` at state `x`.
template <SafetyIndexLike Index>
SafeControlResult solve_safe_control_multiplicative(std::span<const double> x, std::span<const double> u_ref,
                                                    const MultiModalModel& model, const Index& index,
                                                    const GammaSpec& gamma, const MultiplicativeOptions& opt = {}) {
  return solve_multiplicative_at(model.eval(x), index.evaluate(x), u_ref, model.box(), gamma, opt);
}

}  // namespace mmrssa
