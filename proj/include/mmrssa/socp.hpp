#pragma once

// Primal log-barrier interior-point method for
//
//   min ‖u − u_ref‖²  s.t.  ‖L_iᵀu‖ ≤ −μ_iᵀu + c_i  (all i),  lo ≤ u ≤ hi
//
// with a Phase-I problem min s s.t. ‖L_iᵀu‖ ≤ −μ_iᵀu + c_i + s for the
// starting point and the infeasibility certificate. Sized for a handful of
// controls and cones.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mathkit.hpp"
#include "model.hpp"

namespace mmrssa {

/// ‖Lᵀu‖ ≤ −muᵀu + c.
struct SocConstraint {
  Matrix L;
  Vector mu;
  double c = 0.0;

  /// ‖Lᵀu‖ + muᵀu − c; ≤ 0 when satisfied.
  double residual(std::span<const double> u) const {
    double w2 = 0.0;
    for (std::size_t k = 0; k < L.cols(); ++k) {
      double wk = 0.0;
      for (std::size_t j = 0; j < L.rows(); ++j) wk += L(j, k) * u[j];
      w2 += wk * wk;
    }
    return std::sqrt(w2) + dot(mu, u) - c;
  }
};

struct SocpOptions {
  double gap_tol = 1e-8;         // stop when (barrier degree)/τ falls below this
  double mu_factor = 5.0;        // τ ← τ·mu_factor each outer iteration
  double feas_tol = 1e-9;        // Phase-I optimum above this certifies infeasibility
  int max_newton = 60;           // per centering
  bool feasibility_only = false; // stop as soon as a strictly feasible point is found
};

struct SocpResult {
  Vector u;
  double objective = std::numeric_limits<double>::infinity();
  bool feasible = false;
  double max_violation = 0.0;    // Phase-I optimum: min over the box of max_i residual
  std::vector<double> cone_multipliers;
  int newton_steps = 0;
};

/// Max constraint residual at u.
inline double max_residual(std::span<const SocConstraint> cons, std::span<const double> u) {
  double v = -std::numeric_limits<double>::infinity();
  for (const auto& c : cons) v = std::max(v, c.residual(u));
  return v;
}

namespace detail {

// Barrier problem over z = u (Phase II) or z = (u, s) (Phase I).
class BarrierProblem {
 public:
  BarrierProblem(std::span<const double> u_ref, std::span<const SocConstraint> cons, const ControlBox& box,
                 bool phase_one)
      : u_ref_(u_ref), cons_(cons), box_(box), phase_one_(phase_one), m_(u_ref.size()),
        d_(u_ref.size() + (phase_one ? 1 : 0)) {}

  std::size_t dim() const { return d_; }
  double degree() const { return 2.0 * static_cast<double>(cons_.size()) + 2.0 * static_cast<double>(m_); }

  double objective(std::span<const double> z) const {
    if (phase_one_) return z[m_];
    double s = 0.0;
    for (std::size_t j = 0; j < m_; ++j) s += (z[j] - u_ref_[j]) * (z[j] - u_ref_[j]);
    return s;
  }

  // Returns +inf outside the barrier domain.
  double barrier(std::span<const double> z) const {
    double b = 0.0;
    for (std::size_t j = 0; j < m_; ++j) {
      const double a = z[j] - box_.lower[j], c = box_.upper[j] - z[j];
      if (!(a > 0.0) || !(c > 0.0)) return std::numeric_limits<double>::infinity();
      b -= std::log(a) + std::log(c);
    }
    for (const auto& con : cons_) {
      double t, w2;
      cone_terms(con, z, t, w2, nullptr);
      const double d = t * t - w2;
      if (!(t > 0.0) || !(d > 0.0)) return std::numeric_limits<double>::infinity();
      b -= std::log(d);
    }
    return b;
  }

  // Gradient and Hessian of τ·objective + barrier.
  void derivatives(std::span<const double> z, double tau, Vector& grad, Matrix& hess) const {
    grad.assign(d_, 0.0);
    hess = Matrix(d_, d_);
    if (phase_one_) {
      grad[m_] = tau;
    } else {
      for (std::size_t j = 0; j < m_; ++j) {
        grad[j] = 2.0 * tau * (z[j] - u_ref_[j]);
        hess(j, j) = 2.0 * tau;
      }
    }
    for (std::size_t j = 0; j < m_; ++j) {
      const double a = z[j] - box_.lower[j], c = box_.upper[j] - z[j];
      grad[j] += -1.0 / a + 1.0 / c;
      hess(j, j) += 1.0 / (a * a) + 1.0 / (c * c);
    }
    Vector lw(m_);
    Vector dt(d_), dd(d_);
    for (const auto& con : cons_) {
      double t, w2;
      cone_terms(con, z, t, w2, &lw);  // lw = L Lᵀ u
      const double d = t * t - w2;
      for (std::size_t j = 0; j < m_; ++j) dt[j] = -con.mu[j];
      if (phase_one_) dt[m_] = 1.0;
      // ∇D = 2t∇t − 2[L Lᵀu; 0]
      for (std::size_t k = 0; k < d_; ++k) dd[k] = 2.0 * t * dt[k] - (k < m_ ? 2.0 * lw[k] : 0.0);
      for (std::size_t k = 0; k < d_; ++k) grad[k] -= dd[k] / d;
      // Hess(−log D) = ∇D∇Dᵀ/D² − ∇²D/D, with ∇²D = 2∇t∇tᵀ − 2[LLᵀ 0; 0 0]
      for (std::size_t r = 0; r < d_; ++r)
        for (std::size_t c = 0; c < d_; ++c) {
          double h = dd[r] * dd[c] / (d * d) - 2.0 * dt[r] * dt[c] / d;
          if (r < m_ && c < m_) {
            double llt = 0.0;
            for (std::size_t k = 0; k < con.L.cols(); ++k) llt += con.L(r, k) * con.L(c, k);
            h += 2.0 * llt / d;
          }
          hess(r, c) += h;
        }
    }
  }

  // t = c − μᵀu (+ s), ‖w‖² with w = Lᵀu; optionally L Lᵀ u.
  void cone_terms(const SocConstraint& con, std::span<const double> z, double& t, double& w2, Vector* llt_u) const {
    t = con.c;
    for (std::size_t j = 0; j < m_; ++j) t -= con.mu[j] * z[j];
    if (phase_one_) t += z[m_];
    w2 = 0.0;
    if (llt_u) llt_u->assign(m_, 0.0);
    for (std::size_t k = 0; k < con.L.cols(); ++k) {
      double wk = 0.0;
      for (std::size_t j = 0; j < m_; ++j) wk += con.L(j, k) * z[j];
      w2 += wk * wk;
      if (llt_u)
        for (std::size_t j = 0; j < m_; ++j) (*llt_u)[j] += con.L(j, k) * wk;
    }
  }

 private:
  std::span<const double> u_ref_;
  std::span<const SocConstraint> cons_;
  const ControlBox& box_;
  bool phase_one_;
  std::size_t m_;
  std::size_t d_;
};

// Damped Newton centering. Returns the number of Newton steps taken.
inline int center(const BarrierProblem& prob, Vector& z, double tau, int max_newton) {
  Vector grad;
  Matrix hess;
  Vector trial(z.size());
  int steps = 0;
  double f = tau * prob.objective(z) + prob.barrier(z);
  for (; steps < max_newton; ++steps) {
    prob.derivatives(z, tau, grad, hess);
    Vector dir;
    try {
      dir = solve_spd(hess, grad);
    } catch (const NotPsdError&) {
      double reg = 1e-12 * std::max(1.0, hess.max_abs());
      for (;;) {
        Matrix h = hess;
        for (std::size_t k = 0; k < h.rows(); ++k) h(k, k) += reg;
        try {
          dir = solve_spd(h, grad);
          break;
        } catch (const NotPsdError&) {
          reg *= 100.0;
        }
      }
    }
    for (double& v : dir) v = -v;
    const double decrement2 = -dot(grad, dir);
    if (decrement2 <= 2e-14) break;
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    for (int ls = 0; ls < 80; ++ls) {
      for (std::size_t k = 0; k < z.size(); ++k) trial[k] = z[k] + step * dir[k];
      f_new = tau * prob.objective(trial) + prob.barrier(trial);
      if (std::isfinite(f_new) && f_new <= f - 0.25 * step * decrement2) break;
      step *= 0.5;
    }
    if (!std::isfinite(f_new) || f_new > f) break;
    z = trial;
    f = f_new;
    if (step * step * decrement2 < 1e-20) break;
  }
  return steps;
}

}  // namespace detail

/// Global minimizer of ‖u − u_ref‖² over the cone constraints and the box.
inline SocpResult solve_socp(std::span<const double> u_ref, std::span<const SocConstraint> cons,
                             const ControlBox& box, const SocpOptions& opt = {}) {
  const std::size_t m = u_ref.size();
  if (box.size() != m) throw DimensionError("solve_socp: box dimension");
  for (const auto& c : cons)
    if (c.mu.size() != m || c.L.rows() != m) throw DimensionError("solve_socp: constraint dimension");
  for (std::size_t j = 0; j < m; ++j)
    if (!(box.upper[j] > box.lower[j])) throw std::invalid_argument("solve_socp: box must have nonempty interior");

  SocpResult res;
  double scale = 1.0;
  for (const auto& c : cons) scale = std::max(scale, std::abs(c.c));
  const double margin = 1e-9 * scale;

  // Clipped reference feasible: it is the projection of u_ref onto the box, hence optimal.
  Vector u0 = box.clip(u_ref);
  if (max_residual(cons, u0) <= 0.0) {
    res.objective = squared_distance(u0, u_ref);
    res.u = u0;
    res.feasible = true;
    res.max_violation = max_residual(cons, u0);
    res.cone_multipliers.assign(cons.size(), 0.0);
    return res;
  }

  // Phase I from the box centre.
  Vector z(m + 1);
  for (std::size_t j = 0; j < m; ++j) z[j] = 0.5 * (box.lower[j] + box.upper[j]);
  const double v0 = max_residual(cons, std::span<const double>(z.data(), m));
  z[m] = v0 + 1.0 + 0.1 * std::abs(v0);
  {
    detail::BarrierProblem p1(u_ref, cons, box, true);
    double tau = p1.degree() / std::max(1.0, std::abs(z[m]));
    for (int outer = 0; outer < 200; ++outer) {
      res.newton_steps += detail::center(p1, z, tau, opt.max_newton);
      const double v = max_residual(cons, std::span<const double>(z.data(), m));
      if (v < -margin) break;  // strictly feasible point found
      if (p1.degree() / tau < opt.gap_tol * std::max(1.0, std::abs(v))) break;
      tau *= opt.mu_factor;
    }
  }
  Vector u(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(m));
  res.max_violation = max_residual(cons, u);
  if (res.max_violation > opt.feas_tol * scale) {
    res.u = u;
    res.feasible = false;
    return res;
  }
  res.feasible = true;
  if (res.max_violation >= -margin || opt.feasibility_only) {
    // Either the feasible set has (numerically) no interior or the caller only
    // asked for feasibility; the Phase-I point is returned as is.
    res.u = u;
    res.objective = squared_distance(u, u_ref);
    res.cone_multipliers.assign(cons.size(), 0.0);
    return res;
  }

  // Phase II.
  detail::BarrierProblem p2(u_ref, cons, box, false);
  double tau = p2.degree() / std::max(1.0, p2.objective(u));
  for (int outer = 0; outer < 200; ++outer) {
    res.newton_steps += detail::center(p2, u, tau, opt.max_newton);
    if (p2.degree() / tau < opt.gap_tol) break;
    tau *= opt.mu_factor;
  }
  res.u = u;
  res.objective = p2.objective(u);
  res.cone_multipliers.resize(cons.size());
  for (std::size_t i = 0; i < cons.size(); ++i) {
    const double r = cons[i].residual(u);
    res.cone_multipliers[i] = r < 0.0 ? 1.0 / (tau * -r) : 0.0;
  }
  return res;
}

}  // namespace mmrssa
