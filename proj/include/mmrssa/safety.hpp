#pragma once

// Safety specification, the parameterized safety index family and the margin
// function γ in the constraint φ̇(x,u) ≤ −γ(φ(x)).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>

#include "mathkit.hpp"

namespace mmrssa {

/// Value and (sub)gradient of a safety index at one state.
struct SafetyEval {
  double value = 0.0;
  Vector grad;
};

/// Anything the solvers can treat as a safety index.
template <typename T>
concept SafetyIndexLike = requires(const T& index, std::span<const double> x) {
  { index.evaluate(x) } -> std::convertible_to<SafetyEval>;
};

/// Extended class-K margin γ(v) = slope·v.
struct GammaSpec {
  double slope = 1.0;

  void validate() const {
    if (!(slope > 0.0)) throw std::invalid_argument("GammaSpec: slope must be positive");
  }
};

inline double gamma_eval(double v, const GammaSpec& spec) { return spec.slope * v; }

}  // namespace mmrssa

namespace mmrssa::segway {

struct SafetyIndexParams {
  double alpha = 1.0;
  double k_v = 1.0;
  double beta = 0.001;

  void validate() const {
    if (!(alpha > 0.0) || !(k_v > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("SafetyIndexParams: alpha, k_v and beta must be positive");
  }
};

/// Hand-designed index used as the comparison baseline.
inline constexpr SafetyIndexParams kHandIndex{1.0, 1.0, 0.001};

inline constexpr double kTiltLimit = 0.1;

constexpr double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// φ₀ = |φ| − 0.1 on the tilt angle.
inline double phi0(std::span<const double> x) { return std::abs(x[1]) - kTiltLimit; }

/// The designed branch −0.1^α + |φ|^α + k_v·sign(φ)·φ̇ + β.
inline double phi_designed(std::span<const double> x, const SafetyIndexParams& prm) {
  return -std::pow(kTiltLimit, prm.alpha) + std::pow(std::abs(x[1]), prm.alpha) + prm.k_v * sign(x[1]) * x[3] +
         prm.beta;
}

/// φ = max{φ₀, designed branch}.
inline double phi(std::span<const double> x, const SafetyIndexParams& prm) {
  return std::max(phi0(x), phi_designed(x, prm));
}

/// Gradient of the active branch. Ties go to the designed branch; at φ = 0
/// the |φ|^α term contributes 0 and sign(0) = 0.
inline Vector grad_phi(std::span<const double> x, const SafetyIndexParams& prm) {
  const double tilt = x[1];
  const double s = sign(tilt);
  if (phi0(x) > phi_designed(x, prm)) return {0.0, s, 0.0, 0.0};
  const double d_tilt = (tilt == 0.0) ? 0.0 : prm.alpha * std::pow(std::abs(tilt), prm.alpha - 1.0) * s;
  return {0.0, d_tilt, 0.0, prm.k_v * s};
}

/// Parameterized tilt index.
class TiltIndex {
 public:
  TiltIndex() = default;
  explicit TiltIndex(SafetyIndexParams prm) : prm_(prm) {}

  const SafetyIndexParams& params() const { return prm_; }

  SafetyEval evaluate(std::span<const double> x) const {
    if (x.size() != 4) throw DimensionError("TiltIndex: expected a 4-dimensional Segway state");
    return {phi(x, prm_), grad_phi(x, prm_)};
  }

 private:
  SafetyIndexParams prm_{};
};

/// The raw specification φ₀ used directly as a safety index.
class SpecIndex {
 public:
  SafetyEval evaluate(std::span<const double> x) const {
    if (x.size() != 4) throw DimensionError("SpecIndex: expected a 4-dimensional Segway state");
    return {phi0(x), {0.0, sign(x[1]), 0.0, 0.0}};
  }
};

static_assert(SafetyIndexLike<TiltIndex>);
static_assert(SafetyIndexLike<SpecIndex>);

}  // namespace mmrssa::segway
