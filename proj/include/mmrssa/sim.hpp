#pragma once

// Closed-loop Segway rollouts, the moment-matched single-Gaussian baseline
// and feasible-control-set measurement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "additive_solver.hpp"
#include "cert.hpp"
#include "mathkit.hpp"
#include "model.hpp"
#include "multiplicative_solver.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "safety.hpp"
#include "segway.hpp"

namespace mmrssa {

/// u_ref = gain·(target_speed − ṗ), clipped to the box.
inline Vector nominal_controller(std::span<const double> x, const ControlBox& box, double target_speed = 1.0,
                                 double gain = 10.0) {
  if (x.size() < 3) throw DimensionError("nominal_controller: Segway state expected");
  Vector u(box.size(), gain * (target_speed - x[2]));
  return box.clip(u);
}

namespace detail {

inline Vector affine_field(std::span<const double> f, const Matrix& g, std::span<const double> u) {
  Vector d(f.begin(), f.end());
  for (std::size_t a = 0; a < d.size(); ++a)
    for (std::size_t j = 0; j < u.size(); ++j) d[a] += g(a, j) * u[j];
  return d;
}

inline Vector rk4(std::span<const double> x, double dt, const std::function<Vector(std::span<const double>)>& field) {
  const std::size_t n = x.size();
  Vector tmp(n);
  const Vector k1 = field(x);
  for (std::size_t a = 0; a < n; ++a) tmp[a] = x[a] + 0.5 * dt * k1[a];
  const Vector k2 = field(tmp);
  for (std::size_t a = 0; a < n; ++a) tmp[a] = x[a] + 0.5 * dt * k2[a];
  const Vector k3 = field(tmp);
  for (std::size_t a = 0; a < n; ++a) tmp[a] = x[a] + dt * k3[a];
  const Vector k4 = field(tmp);
  Vector out(n);
  for (std::size_t a = 0; a < n; ++a) out[a] = x[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
  return out;
}

}  // namespace detail

/// RK4 over one step with (f, g) held constant.
inline Vector step(std::span<const double> x, std::span<const double> u, double dt, const DynamicsSample& truth) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  return detail::rk4(x, dt, [&](std::span<const double>) { return detail::affine_field(truth.f, truth.g, u); });
}

/// RK4 over one step where the sampled deviation from the nominal model,
/// (f − f_nom(x), g − g_nom(x)), is held and the nominal part is re-evaluated
/// at every stage.
inline Vector step(std::span<const double> x, std::span<const double> u, double dt, const DynamicsSample& truth,
                   const NominalDynamics& nominal) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const auto [f0, g0] = nominal(x);
  Vector df(f0.size());
  for (std::size_t a = 0; a < df.size(); ++a) df[a] = truth.f[a] - f0[a];
  const Matrix dg = truth.g - g0;
  return detail::rk4(x, dt, [&](std::span<const double> y) {
    auto [f, g] = nominal(y);
    for (std::size_t a = 0; a < f.size(); ++a) f[a] += df[a];
    g += dg;
    return detail::affine_field(f, g, u);
  });
}

/// Safe-control pipeline: (x, u_ref) → result.
using SafeController = std::function<SafeControlResult(std::span<const double>, std::span<const double>)>;

template <SafetyIndexLike Index>
SafeController make_safe_controller(const MultiModalModel& model, Index index, GammaSpec gamma, SolverKind solver,
                                    double eps_f, double eps0 = 1e-6, MultiplicativeOptions mult = {}) {
  return [&model, index, gamma, solver, eps_f, eps0, mult](std::span<const double> x, std::span<const double> u_ref) {
    if (solver == SolverKind::additive) return solve_safe_control_additive(x, u_ref, model, index, gamma, {eps_f, eps0});
    MultiplicativeOptions o = mult;
    o.eps_f = eps_f;
    return solve_safe_control_multiplicative(x, u_ref, model, index, gamma, o);
  };
}

struct RolloutOptions {
  double horizon = 10.0;
  double dt = 0.01;
  double target_speed = 1.0;
  double gain = 10.0;
  bool safe_layer = true;
};

struct RolloutRecord {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> controls;
  std::vector<double> phi;
  std::vector<double> realized_margin;     // φ̇ + γ(φ) under the sampled truth; ≤ 0 satisfies the constraint
  std::vector<SolveStatus> statuses;
  std::vector<std::vector<ModeAllocation>> allocations;
  bool terminated = false;                 // |tilt| reached π/2
  std::string termination_cause;

  double max_abs_tilt() const {
    double m = 0.0;
    for (const auto& x : states) m = std::max(m, std::abs(x[1]));
    return m;
  }
};

/// One closed-loop run with `model` as the ground truth. The truth (f, g) is
/// resampled every step and held over it.
template <SafetyIndexLike Index>
RolloutRecord rollout(const SafeController& controller, const Index& index, const GammaSpec& gamma,
                      const MultiModalModel& model, std::span<const double> x0, Rng& rng,
                      const RolloutOptions& opt = {}) {
  if (!(opt.dt > 0.0) || !(opt.horizon > 0.0)) throw std::invalid_argument("rollout: dt and horizon must be positive");
  RolloutRecord rec;
  Vector x(x0.begin(), x0.end());
  const auto steps = static_cast<std::size_t>(std::llround(opt.horizon / opt.dt));
  for (std::size_t k = 0; k < steps; ++k) {
    if (std::abs(x[1]) >= std::numbers::pi / 2.0) {
      rec.terminated = true;
      rec.termination_cause = "tilt left the model's validity range";
      break;
    }
    const SafetyEval se = index.evaluate(x);
    const Vector u_ref = nominal_controller(x, model.box(), opt.target_speed, opt.gain);
    SafeControlResult sc;
    if (opt.safe_layer) {
      sc = controller(x, u_ref);
    } else {
      sc.u = u_ref;
      sc.status = SolveStatus::reference_feasible;
    }
    const DynamicsSample truth = sample_dynamics(model, x, rng);
    const Vector xdot = detail::affine_field(truth.f, truth.g, sc.u);

    rec.times.push_back(static_cast<double>(k) * opt.dt);
    rec.states.push_back(x);
    rec.controls.push_back(sc.u);
    rec.phi.push_back(se.value);
    rec.realized_margin.push_back(dot(se.grad, xdot) + gamma_eval(se.value, gamma));
    rec.statuses.push_back(sc.status);
    rec.allocations.push_back(sc.allocation);

    try {
      x = model.has_nominal() ? step(x, sc.u, opt.dt, truth, [&model](std::span<const double> y) {
        return model.nominal(y);
      })
                              : step(x, sc.u, opt.dt, truth);
    } catch (const std::exception& e) {
      rec.terminated = true;
      rec.termination_cause = e.what();
      break;
    }
  }
  if (!rec.terminated) {
    rec.times.push_back(static_cast<double>(rec.states.size()) * opt.dt);
    rec.states.push_back(x);
  }
  return rec;
}

/// Moment-matched single Gaussian: mixture mean and covariance for f and g.
inline ModeParams baseline_unimodal(const ModeList& modes) {
  if (modes.empty()) throw std::invalid_argument("baseline_unimodal: no modes");
  if (modes.size() == 1) {
    ModeParams m = modes.front();
    m.weight = 1.0;
    return m;
  }
  const MixtureMoments mm = mixture_moments(modes);
  bool any_g = false;
  for (const auto& md : modes) any_g = any_g || !md.sigma_g.empty();
  ModeParams out;
  out.weight = 1.0;
  out.mu_f = mm.mean_f;
  out.sigma_f = mm.cov_f;
  out.mu_g = mm.mean_g;
  if (any_g || mm.cov_g.max_abs() > 0.0) out.sigma_g = mm.cov_g;
  return out;
}

struct FeasibleSetReport {
  Vector state;
  double multi_modal_interval = 0.0;  // measure of admissible controls in the box
  double uni_modal_interval = 0.0;
  double rhs_multi = 0.0;             // additive: b of a·u ≤ b; multiplicative: min_i c_i
  double rhs_uni = 0.0;
  SolveStatus multi_status = SolveStatus::optimal;
};

/// Sweeps a single-control box at `points` evenly spaced controls and counts
/// those satisfying the multi-modal constraint (at the solver's allocation)
/// and the single-Gaussian baseline constraint at p = 1 − eps_f.
template <SafetyIndexLike Index>
FeasibleSetReport compare_feasible_sets(std::span<const double> x, const MultiModalModel& model, const Index& index,
                                        const GammaSpec& gamma, SolverKind solver, double eps_f,
                                        std::size_t points = 10000, double eps0 = 1e-6) {
  const ControlBox& box = model.box();
  if (box.size() != 1) throw DimensionError("compare_feasible_sets: only single-control boxes are swept");
  const ModeList modes = model.eval(x);
  const SafetyEval se = index.evaluate(x);
  const double gv = gamma_eval(se.value, gamma);
  const ModeList uni{baseline_unimodal(modes)};
  const Vector u_ref = nominal_controller(x, box);

  std::function<bool(double)> ok_multi, ok_uni;
  FeasibleSetReport rep;
  rep.state.assign(x.begin(), x.end());
  if (solver == SolverKind::additive) {
    const AdditiveOptions ao{eps_f, eps0};
    double b_multi = -std::numeric_limits<double>::infinity(), b_uni = b_multi;
    Vector a = modes.front().grad_times_mu_g(se.grad);
    try {
      b_multi = binary_search_allocation(modes, se.grad, gv, ao).b;
    } catch (const BracketExhausted&) {
      rep.multi_status = SolveStatus::infeasible_relaxed;
    }
    try {
      b_uni = binary_search_allocation(uni, se.grad, gv, ao).b;
    } catch (const BracketExhausted&) {
    }
    rep.rhs_multi = b_multi;
    rep.rhs_uni = b_uni;
    ok_multi = [a, b_multi](double u) { return a[0] * u <= b_multi; };
    const Vector a_uni = uni.front().grad_times_mu_g(se.grad);
    ok_uni = [a_uni, b_uni](double u) { return a_uni[0] * u <= b_uni; };
  } else {
    MultiplicativeOptions mo;
    mo.eps_f = eps_f;
    const SafeControlResult r = solve_multiplicative_at(modes, se, u_ref, box, gamma, mo);
    rep.multi_status = r.status;
    std::vector<SocConstraint> cons;
    rep.rhs_multi = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < modes.size(); ++i) {
      if (!r.allocation[i].enforced) continue;
      cons.push_back(build_soc_constraint(modes[i], r.allocation[i].p, se.grad, gv));
      rep.rhs_multi = std::min(rep.rhs_multi, cons.back().c);
    }
    const std::vector<SocConstraint> cons_uni{build_soc_constraint(uni.front(), 1.0 - eps_f, se.grad, gv)};
    rep.rhs_uni = cons_uni.front().c;
    ok_multi = [cons](double u) { return max_residual(cons, std::span<const double>(&u, 1)) <= 0.0; };
    ok_uni = [cons_uni](double u) { return max_residual(cons_uni, std::span<const double>(&u, 1)) <= 0.0; };
  }

  const double lo = box.lower[0], hi = box.upper[0];
  std::size_t n_multi = 0, n_uni = 0;
  for (std::size_t k = 0; k < points; ++k) {
    const double u = points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
    n_multi += ok_multi(u) ? 1 : 0;
    n_uni += ok_uni(u) ? 1 : 0;
  }
  rep.multi_modal_interval = (hi - lo) * static_cast<double>(n_multi) / static_cast<double>(points);
  rep.uni_modal_interval = (hi - lo) * static_cast<double>(n_uni) / static_cast<double>(points);
  return rep;
}

/// Summary over many seeded rollouts.
struct RolloutBatchStats {
  std::size_t rollouts = 0;
  std::size_t rollouts_within_limit = 0;  // |tilt| < limit at every recorded state
  std::size_t solved_steps = 0;           // steps whose solve was not infeasible-relaxed
  std::size_t violated_steps = 0;         // solved steps with realized margin > 0
  std::size_t relaxed_steps = 0;
  double max_abs_tilt = 0.0;
};

template <SafetyIndexLike Index>
RolloutBatchStats rollout_batch(const SafeController& controller, const Index& index, const GammaSpec& gamma,
                                const MultiModalModel& model, const std::vector<Vector>& starts, std::uint64_t seed,
                                const RolloutOptions& opt = {}, double tilt_limit = 0.1, unsigned threads = 0,
                                std::vector<RolloutRecord>* keep = nullptr) {
  std::vector<RolloutRecord> recs(starts.size());
  parallel_for(starts.size(), threads, [&](std::size_t i) {
    Rng rng = make_stream(seed, i);
    recs[i] = rollout(controller, index, gamma, model, starts[i], rng, opt);
  });
  RolloutBatchStats s;
  s.rollouts = recs.size();
  for (const auto& r : recs) {
    const double mt = r.max_abs_tilt();
    s.max_abs_tilt = std::max(s.max_abs_tilt, mt);
    if (mt < tilt_limit && !r.terminated) ++s.rollouts_within_limit;
    for (std::size_t k = 0; k < r.statuses.size(); ++k) {
      if (r.statuses[k] == SolveStatus::infeasible_relaxed) {
        ++s.relaxed_steps;
        continue;
      }
      ++s.solved_steps;
      if (r.realized_margin[k] > 0.0) ++s.violated_steps;
    }
  }
  if (keep) *keep = std::move(recs);
  return s;
}

/// States visited by rollouts of the nominal controller, one per control period.
inline std::vector<Vector> trajectory_states(const MultiModalModel& model, const std::vector<Vector>& starts,
                                             std::uint64_t seed, const RolloutOptions& opt, std::size_t max_states) {
  std::vector<Vector> out;
  RolloutOptions o = opt;
  o.safe_layer = false;
  const SafeController none;
  const segway::SpecIndex spec;
  for (std::size_t i = 0; i < starts.size() && out.size() < max_states; ++i) {
    Rng rng = make_stream(seed, i);
    const RolloutRecord r = rollout(none, spec, GammaSpec{}, model, starts[i], rng, o);
    for (std::size_t k = 0; k < r.statuses.size() && out.size() < max_states; ++k) out.push_back(r.states[k]);
  }
  return out;
}

}  // namespace mmrssa
