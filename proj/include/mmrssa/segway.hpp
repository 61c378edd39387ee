#pragma once

// Segway (wheeled inverted pendulum) dynamics and its two uncertainty
// configurations: additive drift noise, and a Gaussian-mixture motor constant.

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mathkit.hpp"
#include "model.hpp"

namespace mmrssa::segway {

/// Physical constants. The defaults are a plausible Segway-class set.
struct SegwayParams {
  double m = 44.8;      // cart + wheel mass [kg]
  double m0 = 52.7;     // effective inertia entry [kg]
  double J0 = 5.2;      // frame moment of inertia [kg m^2]
  double mL = 9.3;      // mass-length product [kg m]
  double R = 0.195;     // wheel radius [m]
  double K_m = 2.524;   // motor torque constant
  double K_b = 0.189;   // back-EMF constant
  double grav = 9.81;   // [m/s^2]

  void validate() const {
    for (double v : {m, m0, J0, mL, R, K_m, grav})
      if (!(v > 0.0)) throw std::invalid_argument("SegwayParams: constants must be positive");
    if (!(K_b >= 0.0)) throw std::invalid_argument("SegwayParams: K_b must be nonnegative");
  }
};

/// x = [p, φ, ṗ, φ̇].
struct SegwayState {
  double p = 0.0;
  double varphi = 0.0;
  double p_dot = 0.0;
  double varphi_dot = 0.0;

  static SegwayState from(std::span<const double> x) {
    if (x.size() != 4) throw DimensionError("SegwayState: expected 4 components");
    return {x[0], x[1], x[2], x[3]};
  }
  Vector vec() const { return {p, varphi, p_dot, varphi_dot}; }
};

class SingularMassMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// f(x) and g(x) of the nominal model ẋ = f(x) + g(x)u.
inline std::pair<Vector, Matrix> segway_nominal(const SegwayState& x, const SegwayParams& prm) {
  const double c = std::cos(x.varphi);
  const double s = std::sin(x.varphi);
  // M(q) = [[m0, mL cos φ], [mL cos φ, J0]]
  const double m11 = prm.m0, m12 = prm.mL * c, m22 = prm.J0;
  const double det = m11 * m22 - m12 * m12;
  if (std::abs(det) < 1e-12) throw SingularMassMatrix("segway_nominal: singular mass matrix");
  const double i11 = m22 / det, i12 = -m12 / det, i22 = m11 / det;

  const double bt = prm.K_m * prm.K_b / prm.R;
  const double slip = x.p_dot - prm.R * x.varphi_dot;
  const double h1 = -prm.mL * s * x.varphi_dot * x.varphi_dot + bt / prm.R * slip;
  const double h2 = -prm.mL * prm.grav * s - bt * slip;
  const double b1 = prm.K_m / prm.R, b2 = -prm.K_m;

  Vector f{x.p_dot, x.varphi_dot, -(i11 * h1 + i12 * h2), -(i12 * h1 + i22 * h2)};
  Matrix g(4, 1);
  g(2, 0) = i11 * b1 + i12 * b2;
  g(3, 0) = i12 * b1 + i22 * b2;
  return {std::move(f), std::move(g)};
}

/// ½ q̇ᵀM(q)q̇ + mL·grav·cos φ; conserved when u = 0 and K_b = 0.
inline double mechanical_energy(const SegwayState& x, const SegwayParams& prm) {
  const double m12 = prm.mL * std::cos(x.varphi);
  const double kinetic = 0.5 * (prm.m0 * x.p_dot * x.p_dot + 2.0 * m12 * x.p_dot * x.varphi_dot +
                                prm.J0 * x.varphi_dot * x.varphi_dot);
  return kinetic + prm.mL * prm.grav * std::cos(x.varphi);
}

inline ControlBox default_control_box() { return {{-20.0}, {20.0}}; }

inline NominalDynamics nominal_dynamics(const SegwayParams& prm) {
  return [prm](std::span<const double> x) { return segway_nominal(SegwayState::from(x), prm); };
}

/// Additive drift disturbance d ~ N(mu_d, sigma_d) in one mode.
struct AdditiveMode {
  double weight = 1.0;
  Vector mu_d;
  Matrix sigma_d;
};

/// ẋ = f(x) + d + g(x)u with d a Gaussian mixture.
inline MultiModalModel segway_additive_model(const SegwayParams& prm, std::vector<AdditiveMode> modes,
                                             ControlBox box = default_control_box(),
                                             const NumericPolicy& policy = {}) {
  prm.validate();
  if (modes.empty()) throw std::invalid_argument("segway_additive_model: no modes");
  double total = 0.0;
  for (const auto& md : modes) {
    if (md.mu_d.size() != 4 || md.sigma_d.rows() != 4 || md.sigma_d.cols() != 4)
      throw DimensionError("segway_additive_model: disturbance must be 4-dimensional");
    require_psd(md.sigma_d, policy);
    total += md.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("segway_additive_model: weights must sum to 1");

  auto shared = std::make_shared<const std::vector<AdditiveMode>>(std::move(modes));
  auto eval = [prm, shared](std::span<const double> x) {
    auto [f, g] = segway_nominal(SegwayState::from(x), prm);
    ModeList out;
    out.reserve(shared->size());
    for (const auto& md : *shared) {
      Vector mu_f = f;
      for (std::size_t a = 0; a < 4; ++a) mu_f[a] += md.mu_d[a];
      out.push_back({md.weight, std::move(mu_f), md.sigma_d, g, Matrix{}});
    }
    return out;
  };
  return MultiModalModel(4, 1, std::move(eval), std::move(box), nominal_dynamics(prm));
}

/// Motor torque constant K_m ~ N(mu_k, sigma_k²) in one mode.
struct MotorMode {
  double weight = 1.0;
  double mu_k = 0.0;
  double sigma_k = 0.0;
};

/// Moments of f and g when K_m is Gaussian. Both are affine in K_m (b_t and B
/// are linear in it), so f = f₀ + K_m·f₁ and g = K_m·g₁ exactly and the
/// moments follow in closed form. The f-g correlation induced by the shared
/// K_m is dropped: f and g are treated as independent within a mode.
inline ModeParams motor_mode_moments(const SegwayState& x, const SegwayParams& prm, const MotorMode& md) {
  SegwayParams p0 = prm, p1 = prm;
  p0.K_m = 0.0;
  p1.K_m = 1.0;
  const auto [f0, g0] = segway_nominal(x, p0);
  const auto [f1_full, g1] = segway_nominal(x, p1);
  Vector f1(4);
  for (std::size_t a = 0; a < 4; ++a) f1[a] = f1_full[a] - f0[a];

  ModeParams out;
  out.weight = md.weight;
  out.mu_f = f0;
  for (std::size_t a = 0; a < 4; ++a) out.mu_f[a] += md.mu_k * f1[a];
  const double var = md.sigma_k * md.sigma_k;
  out.sigma_f = var * outer(f1, f1);
  out.mu_g = md.mu_k * g1;
  const Vector g1v = g1.col(0);
  out.sigma_g = var * outer(g1v, g1v);
  return out;
}

inline MultiModalModel segway_multiplicative_model(const SegwayParams& prm, std::vector<MotorMode> modes,
                                                   ControlBox box = default_control_box()) {
  prm.validate();
  if (modes.empty()) throw std::invalid_argument("segway_multiplicative_model: no modes");
  double total = 0.0;
  for (const auto& md : modes) {
    if (md.sigma_k < 0.0) throw std::invalid_argument("segway_multiplicative_model: sigma_k must be nonnegative");
    total += md.weight;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("segway_multiplicative_model: weights must sum to 1");

  auto shared = std::make_shared<const std::vector<MotorMode>>(std::move(modes));
  auto eval = [prm, shared](std::span<const double> x) {
    const SegwayState s = SegwayState::from(x);
    ModeList out;
    out.reserve(shared->size());
    for (const auto& md : *shared) out.push_back(motor_mode_moments(s, prm, md));
    return out;
  };
  return MultiModalModel(4, 1, std::move(eval), std::move(box), nominal_dynamics(prm));
}

/// The two-mode additive disturbance used in the Segway experiments.
inline std::vector<AdditiveMode> reference_additive_modes() {
  return {
      {0.8,
       {0.1, -0.1, 0.1, -0.1},
       Matrix{{0.18, 0, 0, 0}, {0, 0.18, 0, 0.1}, {0, 0, 0.18, 0}, {0, 0.1, 0, 0.18}}},
      {0.2,
       {0.1, -0.1, 0.2, -7.0},
       Matrix{{0.1, 0, 0, 0}, {0, 0.1, 0, -0.05}, {0, 0, 0.1, 0}, {0, -0.05, 0, 0.1}}},
  };
}

/// The two-mode motor-constant distribution used in the Segway experiments.
inline std::vector<MotorMode> reference_motor_modes() { return {{0.8, 2.4, 0.05}, {0.2, 4.2, 0.2}}; }

}  // namespace mmrssa::segway
