#pragma once

// (μ/μ_w, λ)-CMA-ES with rank-one and rank-μ covariance updates and
// cumulative step-size adaptation. Minimizes; callers negate to maximize.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "mathkit.hpp"
#include "random.hpp"

namespace mmrssa {

struct CmaesOptions {
  int lambda = 8;
  double sigma0 = 0.3;
};

class Cmaes {
 public:
  Cmaes(Vector mean, const CmaesOptions& opt = {})
      : n_(mean.size()), lambda_(opt.lambda), mean_(std::move(mean)), sigma_(opt.sigma0) {
    if (n_ == 0) throw std::invalid_argument("Cmaes: empty search space");
    if (lambda_ < 2) throw std::invalid_argument("Cmaes: population must be at least 2");
    if (!(sigma_ > 0.0)) throw std::invalid_argument("Cmaes: step size must be positive");
    mu_ = lambda_ / 2;
    weights_.resize(mu_);
    for (int i = 0; i < mu_; ++i) weights_[i] = std::log(mu_ + 0.5) - std::log(i + 1.0);
    const double s = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (double& w : weights_) w /= s;
    double s2 = 0.0;
    for (double w : weights_) s2 += w * w;
    mueff_ = 1.0 / s2;

    const double n = static_cast<double>(n_);
    cc_ = (4.0 + mueff_ / n) / (n + 4.0 + 2.0 * mueff_ / n);
    cs_ = (mueff_ + 2.0) / (n + mueff_ + 5.0);
    c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mueff_);
    cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) / ((n + 2.0) * (n + 2.0) + mueff_));
    damps_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (n + 1.0)) - 1.0) + cs_;
    chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    C_ = Matrix::identity(n_);
    B_ = Matrix::identity(n_);
    D_.assign(n_, 1.0);
    pc_.assign(n_, 0.0);
    ps_.assign(n_, 0.0);
  }

  std::size_t dim() const { return n_; }
  int lambda() const { return lambda_; }
  const Vector& mean() const { return mean_; }
  double sigma() const { return sigma_; }
  int generation() const { return generation_; }

  /// One candidate: m + σ·B·D·z with z standard normal.
  Vector sample(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(n_);
    for (std::size_t k = 0; k < n_; ++k) z[k] = D_[k] * normal(rng);
    const Vector y = B_ * z;
    Vector x(n_);
    for (std::size_t k = 0; k < n_; ++k) x[k] = mean_[k] + sigma_ * y[k];
    return x;
  }

  /// Update from a full population and its costs (lower is better).
  void tell(const std::vector<Vector>& xs, const std::vector<double>& cost) {
    if (xs.size() != static_cast<std::size_t>(lambda_) || cost.size() != xs.size())
      throw std::invalid_argument("Cmaes::tell: population size mismatch");
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost[a] < cost[b]; });

    const Vector old = mean_;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    for (int i = 0; i < mu_; ++i)
      for (std::size_t k = 0; k < n_; ++k) mean_[k] += weights_[i] * xs[order[i]][k];
    Vector yw(n_);
    for (std::size_t k = 0; k < n_; ++k) yw[k] = (mean_[k] - old[k]) / sigma_;

    // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
    Vector t = B_.transpose() * yw;
    for (std::size_t k = 0; k < n_; ++k) t[k] /= D_[k];
    const Vector invsqrt_yw = B_ * t;
    const double a_s = std::sqrt(cs_ * (2.0 - cs_) * mueff_);
    for (std::size_t k = 0; k < n_; ++k) ps_[k] = (1.0 - cs_) * ps_[k] + a_s * invsqrt_yw[k];
    ++generation_;
    const double ps_norm = norm(ps_);
    const double denom = std::sqrt(1.0 - std::pow(1.0 - cs_, 2.0 * generation_));
    const bool hsig = ps_norm / denom / chi_n_ < 1.4 + 2.0 / (static_cast<double>(n_) + 1.0);
    const double a_c = std::sqrt(cc_ * (2.0 - cc_) * mueff_);
    for (std::size_t k = 0; k < n_; ++k) pc_[k] = (1.0 - cc_) * pc_[k] + (hsig ? a_c * yw[k] : 0.0);

    Matrix rank_mu(n_, n_);
    for (int i = 0; i < mu_; ++i) {
      Vector y(n_);
      for (std::size_t k = 0; k < n_; ++k) y[k] = (xs[order[i]][k] - old[k]) / sigma_;
      rank_mu += weights_[i] * outer(y, y);
    }
    const double delta = hsig ? 0.0 : cc_ * (2.0 - cc_);
    C_ = (1.0 - c1_ - cmu_) * C_ + c1_ * (outer(pc_, pc_) + delta * C_) + cmu_ * rank_mu;
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c < r; ++c) C_(r, c) = C_(c, r) = 0.5 * (C_(r, c) + C_(c, r));

    sigma_ *= std::exp((cs_ / damps_) * (ps_norm / chi_n_ - 1.0));

    auto [values, vectors] = symmetric_eigen(C_);
    B_ = std::move(vectors);
    for (std::size_t k = 0; k < n_; ++k) D_[k] = std::sqrt(std::max(values[k], 1e-300));
  }

 private:
  std::size_t n_;
  int lambda_;
  int mu_ = 0;
  Vector weights_;
  double mueff_ = 0.0, cc_ = 0.0, cs_ = 0.0, c1_ = 0.0, cmu_ = 0.0, damps_ = 0.0, chi_n_ = 0.0;
  Vector mean_;
  double sigma_;
  Matrix C_, B_;
  Vector D_, pc_, ps_;
  int generation_ = 0;
};

struct CmaesResult {
  Vector best;
  double best_cost = 0.0;
  int generations = 0;
};

/// Minimizes `cost` from `x0` until σ < tol or the budget is spent.
inline CmaesResult cmaes_minimize(const std::function<double(const Vector&)>& cost, Vector x0,
                                  const CmaesOptions& opt, int max_generations, std::uint64_t seed,
                                  double tol = 1e-12) {
  Cmaes es(std::move(x0), opt);
  CmaesResult res{es.mean(), cost(es.mean()), 0};
  for (int g = 0; g < max_generations; ++g) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(g));
    std::vector<Vector> xs;
    std::vector<double> fs;
    for (int i = 0; i < es.lambda(); ++i) {
      xs.push_back(es.sample(rng));
      fs.push_back(cost(xs.back()));
      if (fs.back() < res.best_cost) {
        res.best_cost = fs.back();
        res.best = xs.back();
      }
    }
    es.tell(xs, fs);
    res.generations = g + 1;
    if (es.sigma() < tol) break;
  }
  return res;
}

}  // namespace mmrssa
