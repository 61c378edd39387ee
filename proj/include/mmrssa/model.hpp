#pragma once

// Multi-modal Gaussian control-affine dynamics: ẋ = f(x,θ) + g(x,θ)u with
// θ drawn from a finite set of modes and, per mode, f and g Gaussian.

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mathkit.hpp"
#include "random.hpp"

namespace mmrssa {

/// One Gaussian mode of the dynamics at a fixed state.
///
/// `sigma_g` is the covariance of vec(g), the columns of g stacked, so it is
/// (n·m)×(n·m). An empty matrix means g is deterministic in this mode.
struct ModeParams {
  double weight = 1.0;
  Vector mu_f;
  Matrix sigma_f;
  Matrix mu_g;
  Matrix sigma_g;

  std::size_t n() const { return mu_f.size(); }
  std::size_t m() const { return mu_g.cols(); }

  /// ∇φᵀ Σ_g ∇φ as an m×m matrix: entry (j,k) is Cov(∇φ·g_j, ∇φ·g_k).
  Matrix g_quadratic_form(std::span<const double> grad) const {
    const std::size_t nn = n(), mm = m();
    Matrix q(mm, mm);
    if (sigma_g.empty()) return q;
    for (std::size_t j = 0; j < mm; ++j)
      for (std::size_t k = 0; k < mm; ++k) {
        double s = 0.0;
        for (std::size_t a = 0; a < nn; ++a) {
          if (grad[a] == 0.0) continue;
          for (std::size_t b = 0; b < nn; ++b) s += grad[a] * grad[b] * sigma_g(j * nn + a, k * nn + b);
        }
        q(j, k) = s;
      }
    return q;
  }

  /// ∇φ·μ_g, the mean constraint normal in control space.
  Vector grad_times_mu_g(std::span<const double> grad) const {
    Vector r(m(), 0.0);
    for (std::size_t j = 0; j < m(); ++j)
      for (std::size_t a = 0; a < n(); ++a) r[j] += grad[a] * mu_g(a, j);
    return r;
  }
};

using ModeList = std::vector<ModeParams>;

/// Per-dimension box on the control.
struct ControlBox {
  Vector lower;
  Vector upper;

  std::size_t size() const { return lower.size(); }
  Vector clip(std::span<const double> u) const {
    Vector r(u.begin(), u.end());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = std::clamp(r[j], lower[j], upper[j]);
    return r;
  }
  bool contains(std::span<const double> u, double tol = 0.0) const {
    for (std::size_t j = 0; j < u.size(); ++j)
      if (u[j] < lower[j] - tol || u[j] > upper[j] + tol) return false;
    return true;
  }
};

/// Deterministic nominal dynamics (f, g) at a state; used to re-evaluate the
/// vector field inside an integration step.
using NominalDynamics = std::function<std::pair<Vector, Matrix>(std::span<const double>)>;

/// Immutable multi-modal model. `eval` is pure.
class MultiModalModel {
 public:
  using Evaluator = std::function<ModeList(std::span<const double>)>;

  MultiModalModel(std::size_t n, std::size_t m, Evaluator eval, ControlBox box, NominalDynamics nominal = {})
      : n_(n), m_(m), eval_(std::move(eval)), box_(std::move(box)), nominal_(std::move(nominal)) {
    if (box_.lower.size() != m_ || box_.upper.size() != m_) throw DimensionError("MultiModalModel: control box size");
    for (std::size_t j = 0; j < m_; ++j)
      if (!(box_.lower[j] <= box_.upper[j])) throw std::invalid_argument("MultiModalModel: empty control box");
  }

  std::size_t state_dim() const { return n_; }
  std::size_t control_dim() const { return m_; }
  const ControlBox& box() const { return box_; }
  bool has_nominal() const { return static_cast<bool>(nominal_); }
  std::pair<Vector, Matrix> nominal(std::span<const double> x) const { return nominal_(x); }

  ModeList eval(std::span<const double> x) const {
    ModeList modes = eval_(x);
    validate(modes);
    return modes;
  }

  void validate(const ModeList& modes) const {
    if (modes.empty()) throw std::invalid_argument("model: no modes");
    double total = 0.0;
    for (const auto& md : modes) {
      if (md.weight < 0.0 || md.weight > 1.0) throw std::invalid_argument("model: mode weight outside [0,1]");
      if (md.mu_f.size() != n_ || md.sigma_f.rows() != n_ || md.sigma_f.cols() != n_ || md.mu_g.rows() != n_ ||
          md.mu_g.cols() != m_)
        throw DimensionError("model: mode dimensions disagree with the model");
      if (!md.sigma_g.empty() && (md.sigma_g.rows() != n_ * m_ || md.sigma_g.cols() != n_ * m_))
        throw DimensionError("model: sigma_g must be (n*m)x(n*m)");
      total += md.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("model: mode weights must sum to 1");
  }

 private:
  std::size_t n_;
  std::size_t m_;
  Evaluator eval_;
  ControlBox box_;
  NominalDynamics nominal_;
};

/// One realisation of the dynamics.
struct DynamicsSample {
  Vector f;
  Matrix g;
  std::size_t mode = 0;
};

/// Draws from a fixed mode list; factors the covariances once.
class MixtureSampler {
 public:
  explicit MixtureSampler(ModeList modes, const NumericPolicy& policy = {}) : modes_(std::move(modes)) {
    double c = 0.0;
    for (const auto& md : modes_) {
      c += md.weight;
      cumulative_.push_back(c);
      chol_f_.push_back(cholesky(md.sigma_f, policy));
      chol_g_.push_back(md.sigma_g.empty() ? Matrix{} : cholesky(md.sigma_g, policy));
    }
  }

  const ModeList& modes() const { return modes_; }

  DynamicsSample operator()(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double r = unif(rng) * cumulative_.back();
    std::size_t i = 0;
    while (i + 1 < cumulative_.size() && r >= cumulative_[i]) ++i;
    return draw_from(i, rng);
  }

  DynamicsSample draw_from(std::size_t i, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    const ModeParams& md = modes_[i];
    const std::size_t n = md.n(), m = md.m();
    DynamicsSample s{md.mu_f, md.mu_g, i};
    Vector z(n);
    for (double& v : z) v = normal(rng);
    const Vector df = chol_f_[i] * z;
    for (std::size_t a = 0; a < n; ++a) s.f[a] += df[a];
    if (!chol_g_[i].empty()) {
      Vector zg(n * m);
      for (double& v : zg) v = normal(rng);
      const Vector dg = chol_g_[i] * zg;
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t a = 0; a < n; ++a) s.g(a, j) += dg[j * n + a];
    }
    return s;
  }

 private:
  ModeList modes_;
  std::vector<double> cumulative_;
  std::vector<Matrix> chol_f_;
  std::vector<Matrix> chol_g_;
};

/// Mode drawn by weight, then f and g from that mode's Gaussians.
inline DynamicsSample sample_dynamics(const MultiModalModel& model, std::span<const double> x, Rng& rng) {
  return MixtureSampler(model.eval(x))(rng);
}

/// First two moments of a Gaussian mixture over f and vec(g).
struct MixtureMoments {
  Vector mean_f;
  Matrix cov_f;
  Matrix mean_g;
  Matrix cov_g;  // over vec(g)
};

inline MixtureMoments mixture_moments(const ModeList& modes) {
  const std::size_t n = modes.front().n(), m = modes.front().m();
  MixtureMoments mm{Vector(n, 0.0), Matrix(n, n), Matrix(n, m), Matrix(n * m, n * m)};
  auto vec_g = [n, m](const Matrix& g) {
    Vector v(n * m);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t a = 0; a < n; ++a) v[j * n + a] = g(a, j);
    return v;
  };
  Vector mean_vg(n * m, 0.0);
  for (const auto& md : modes) {
    for (std::size_t a = 0; a < n; ++a) mm.mean_f[a] += md.weight * md.mu_f[a];
    const Vector vg = vec_g(md.mu_g);
    for (std::size_t k = 0; k < n * m; ++k) mean_vg[k] += md.weight * vg[k];
  }
  for (const auto& md : modes) {
    Vector df(n);
    for (std::size_t a = 0; a < n; ++a) df[a] = md.mu_f[a] - mm.mean_f[a];
    mm.cov_f += md.weight * (md.sigma_f + outer(df, df));
    const Vector vg = vec_g(md.mu_g);
    Vector dg(n * m);
    for (std::size_t k = 0; k < n * m; ++k) dg[k] = vg[k] - mean_vg[k];
    Matrix within = md.sigma_g.empty() ? Matrix(n * m, n * m) : md.sigma_g;
    mm.cov_g += md.weight * (within + outer(dg, dg));
  }
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t a = 0; a < n; ++a) mm.mean_g(a, j) = mean_vg[j * n + a];
  return mm;
}

/// Model whose modes do not depend on the state.
inline MultiModalModel constant_model(ModeList modes, ControlBox box) {
  const std::size_t n = modes.front().n(), m = modes.front().m();
  auto shared = std::make_shared<const ModeList>(std::move(modes));
  return MultiModalModel(
      n, m, [shared](std::span<const double>) { return *shared; }, std::move(box));
}

}  // namespace mmrssa
