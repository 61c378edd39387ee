#pragma once

// CMA-ES search over the Segway safety-index parameters (α, k_v, β) for
// the index whose sampled feasibility certificate is strongest.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cert.hpp"
#include "cmaes.hpp"
#include "random.hpp"
#include "safety.hpp"

namespace mmrssa {

struct ParamRange {
  double low;
  double high;
};

struct SynthesisConfig {
  std::array<ParamRange, 3> ranges{{{0.1, 5.0}, {0.1, 5.0}, {0.001, 1.0}}};  // α, k_v, β
  int population = 8;
  int generations = 50;
  std::size_t eval_samples = 10000;
  std::uint64_t seed = 0;
  double sigma0 = 0.3;
  double z_target = 0.9999;
  StateRegion region = segway_region();
  bool stop_on_zero_infeasible = true;
  unsigned threads = 0;

  void validate() const {
    for (const auto& r : ranges)
      if (!(r.low < r.high)) throw std::invalid_argument("SynthesisConfig: each range needs low < high");
    if (population < 2 || generations < 1 || eval_samples < 1)
      throw std::invalid_argument("SynthesisConfig: population >= 2, generations >= 1, eval_samples >= 1");
    region.validate();
  }
};

/// Lexicographic fitness: certificate strength first, raw feasible fraction second.
struct Fitness {
  double certificate = 0.0;
  double feasible_fraction = 0.0;
  std::size_t n_feasible = 0;
  std::size_t n_infeasible = 0;

  friend bool operator<(const Fitness& a, const Fitness& b) {
    if (a.certificate != b.certificate) return a.certificate < b.certificate;
    return a.feasible_fraction < b.feasible_fraction;
  }
};

/// Unbounded coordinate ↔ parameter via a scaled logistic.
inline double decode_param(double z, const ParamRange& r) { return r.low + (r.high - r.low) / (1.0 + std::exp(-z)); }
inline double encode_param(double v, const ParamRange& r) {
  const double t = (v - r.low) / (r.high - r.low);
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("encode_param: value outside the open range");
  return std::log(t / (1.0 - t));
}

inline segway::SafetyIndexParams decode(const Vector& z, const SynthesisConfig& cfg) {
  return {decode_param(z[0], cfg.ranges[0]), decode_param(z[1], cfg.ranges[1]), decode_param(z[2], cfg.ranges[2])};
}

inline bool strictly_inside(const segway::SafetyIndexParams& p, const SynthesisConfig& cfg) {
  const double v[3] = {p.alpha, p.k_v, p.beta};
  for (int i = 0; i < 3; ++i)
    if (!(v[i] > cfg.ranges[i].low && v[i] < cfg.ranges[i].high)) return false;
  return true;
}

inline Fitness fitness(const segway::SafetyIndexParams& params, const std::vector<Vector>& states,
                       const FeasibilitySetup& setup, double z_target, unsigned threads = 0) {
  const FeasibilityCounts c = check_states(states, segway::TiltIndex(params), setup, threads, false);
  Fitness f;
  f.n_feasible = c.n_feasible;
  f.n_infeasible = c.n_infeasible;
  f.feasible_fraction = static_cast<double>(c.n_feasible) / static_cast<double>(states.size());
  f.certificate = prob_at_least(z_target, static_cast<double>(c.n_feasible), static_cast<double>(c.n_infeasible));
  return f;
}

struct GenerationRecord {
  int generation = 0;
  Fitness best;                       // best of this generation
  double mean_certificate = 0.0;
  double mean_feasible_fraction = 0.0;
  segway::SafetyIndexParams best_params{};
  Fitness best_so_far;
  segway::SafetyIndexParams best_so_far_params{};
};

struct SynthesisResult {
  segway::SafetyIndexParams best{};
  Fitness best_fitness;
  std::vector<GenerationRecord> history;
  bool reached_zero_infeasible = false;
};

/// Each generation draws a fresh state set (stream = generation index) that
/// every candidate of that generation is scored on.
inline SynthesisResult synthesize(const SynthesisConfig& cfg, const FeasibilitySetup& setup,
                                  const std::function<void(const GenerationRecord&)>& on_generation = {}) {
  cfg.validate();
  CmaesOptions co;
  co.lambda = cfg.population;
  co.sigma0 = cfg.sigma0;
  Cmaes es(Vector(3, 0.0), co);

  const std::uint64_t state_seed = stream_seed(cfg.seed, 0x5a5a);
  const std::uint64_t search_seed = stream_seed(cfg.seed, 0xa5a5);
  SynthesisResult res;
  bool have_best = false;

  for (int g = 0; g < cfg.generations; ++g) {
    const auto states = uniform_states(cfg.region, cfg.eval_samples, stream_seed(state_seed, g));
    Rng rng = make_stream(search_seed, static_cast<std::uint64_t>(g));
    std::vector<Vector> xs;
    std::vector<segway::SafetyIndexParams> ps;
    while (xs.size() < static_cast<std::size_t>(cfg.population)) {
      Vector z = es.sample(rng);
      const auto p = decode(z, cfg);
      if (!strictly_inside(p, cfg)) continue;  // logistic saturated at a bound
      xs.push_back(std::move(z));
      ps.push_back(p);
    }

    std::vector<Fitness> fit;
    for (const auto& p : ps) fit.push_back(fitness(p, states, setup, cfg.z_target, cfg.threads));

    // Rank by fitness, descending; CMA-ES minimizes, so cost is the rank.
    std::vector<std::size_t> order(fit.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[b] < fit[a]; });
    std::vector<double> cost(fit.size());
    for (std::size_t r = 0; r < order.size(); ++r) cost[order[r]] = static_cast<double>(r);

    GenerationRecord rec;
    rec.generation = g;
    rec.best = fit[order.front()];
    rec.best_params = ps[order.front()];
    for (const auto& f : fit) {
      rec.mean_certificate += f.certificate / static_cast<double>(fit.size());
      rec.mean_feasible_fraction += f.feasible_fraction / static_cast<double>(fit.size());
    }
    if (!have_best || res.best_fitness < rec.best) {
      res.best_fitness = rec.best;
      res.best = rec.best_params;
      have_best = true;
    }
    rec.best_so_far = res.best_fitness;
    rec.best_so_far_params = res.best;
    res.history.push_back(rec);
    if (on_generation) on_generation(rec);

    if (rec.best.n_infeasible == 0) {
      res.reached_zero_infeasible = true;
      if (cfg.stop_on_zero_infeasible) break;
    }
    es.tell(xs, cost);
  }
  return res;
}

}  // namespace mmrssa
