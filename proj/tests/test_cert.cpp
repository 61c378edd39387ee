#include <cmath>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "mmrssa/cert.hpp"
#include "mmrssa/segway.hpp"
#include "property_checks.hpp"

using namespace mmrssa;

namespace {

// Largest z with P(q > z) ≥ conf, by bisection on the certificate.
double certified_level(double nf, double nn, double conf) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (prob_at_least(mid, nf, nn) >= conf ? lo : hi) = mid;
  }
  return lo;
}

template <typename F>
double integrate01(F f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 20, 1e-13);
}

ModeList scalar_modes(double g) {
  return {{0.6, {1.0}, Matrix{{0.01}}, Matrix{{g}}, {}}, {0.4, {2.0}, Matrix{{0.04}}, Matrix{{g}}, {}}};
}

// φ = x − 1 on a scalar state.
struct Affine1d {
  SafetyEval evaluate(std::span<const double> x) const { return {x[0] - 1.0, {1.0}}; }
};

}  // namespace

TEST(PosteriorDensity, UniformPrior) {
  for (double z : {0.1, 0.5, 0.9}) EXPECT_NEAR(posterior_density(z, 0, 0), 1.0, 1e-14);
}

TEST(PosteriorDensity, BetaTwoTwo) {
  EXPECT_NEAR(posterior_density(0.5, 1, 1), 1.5, 1e-13);
  EXPECT_NEAR(posterior_density(0.3, 1, 1), 6 * 0.3 * 0.7, 1e-13);
}

TEST(PosteriorDensity, BetaFourOne) { EXPECT_NEAR(posterior_density(0.7, 3, 0), 4 * 0.7 * 0.7 * 0.7, 1e-13); }

TEST(PosteriorDensity, RejectsEndpoints) {
  EXPECT_THROW(posterior_density(0.0, 1, 1), DomainError);
  EXPECT_THROW(posterior_density(1.0, 1, 1), DomainError);
}

TEST(PosteriorDensity, IntegratesToOneAndHasBetaMean) {
  for (auto [nf, nn, a, b] : {std::tuple{0.0, 0.0, 1.0, 1.0}, {5.0, 2.0, 1.0, 1.0}, {40.0, 3.0, 0.5, 2.0}, {200.0, 0.0, 1.0, 1.0}}) {
    EXPECT_NEAR(integrate01([&](double z) { return posterior_density(z, nf, nn, a, b); }), 1.0, 1e-6);
    EXPECT_NEAR(integrate01([&](double z) { return z * posterior_density(z, nf, nn, a, b); }),
                (nf + a) / (nf + nn + a + b), 1e-6);
  }
}

TEST(ProbAtLeast, ZeroTargetIsCertain) { EXPECT_EQ(prob_at_least(0.0, 10, 3), 1.0); }

TEST(ProbAtLeast, HundredThousandCleanSamples) { EXPECT_GT(prob_at_least(0.9999, 100000, 0), 0.9999); }

TEST(ProbAtLeast, QuarterMillionCleanSamples) { EXPECT_GT(prob_at_least(0.9999, 250000, 0), 0.999999); }

TEST(ProbAtLeast, MatchesPosteriorTailQuadrature) {
  const double z = 0.7;
  const double tail = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double t) { return posterior_density(t, 12, 4); }, z, 1.0, 15, 1e-13);
  EXPECT_NEAR(prob_at_least(z, 12, 4), tail, 1e-10);
}

TEST(ProbAtLeastProperty, CleanClosedForm) {
  proptest::for_all(500, 71, [](Rng& rng) {
    const double z = proptest::uniform(rng, 0.0, 1.0);
    const double nf = std::floor(std::exp(proptest::uniform(rng, 0, 12)));
    const double oracle = 1.0 - std::pow(z, nf + 1.0);
    EXPECT_NEAR(prob_at_least(z, nf, 0), oracle, 1e-9 * std::max(oracle, 1e-300) + 1e-15);
  });
}

TEST(ProbAtLeastProperty, Monotone) {
  proptest::for_all(500, 72, [](Rng& rng) {
    const double nf = std::floor(proptest::uniform(rng, 0, 500)), nn = std::floor(proptest::uniform(rng, 0, 50));
    const double z = proptest::uniform(rng, 0.0, 0.999), dz = proptest::uniform(rng, 0.0, 0.001);
    EXPECT_GE(prob_at_least(z, nf, nn), prob_at_least(z + dz, nf, nn));
    EXPECT_LE(prob_at_least(z, nf, nn), prob_at_least(z, nf + 1, nn) + 1e-15);
    EXPECT_GE(prob_at_least(z, nf, nn), prob_at_least(z, nf, nn + 1) - 1e-15);
  });
}

TEST(Certificate, ExactCoverageOfNinetyFivePercentBound) {
  // enumerate the binomial outcomes instead of sampling them
  for (int n : {100, 1000}) {
    for (double q : {0.9, 0.99, 0.999}) {
      const boost::math::binomial bin(n, q);
      double coverage = 0.0;
      for (int k = 0; k <= n; ++k)
        if (certified_level(k, n - k, 0.95) < q) coverage += boost::math::pdf(bin, k);
      EXPECT_GE(coverage, 0.95) << "n=" << n << " q=" << q;
    }
  }
}

TEST(Certificate, CalibratedOnBernoulliStreams) {
  const double q_star = 0.99;
  const int n = 1000, reps = 1000;
  int below = 0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_stream(73, static_cast<std::uint64_t>(r));
    std::bernoulli_distribution coin(q_star);
    int nf = 0;
    for (int i = 0; i < n; ++i) nf += coin(rng) ? 1 : 0;
    below += certified_level(nf, n - nf, 0.95) < q_star ? 1 : 0;
  }
  EXPECT_GE(below, 950);
}

TEST(Certificate, RejectsBadPrior) { EXPECT_THROW(make_certificate(1, 0, 0.9, 0.0, 1.0), std::invalid_argument); }

TEST(Certificate, Fields) {
  const auto c = make_certificate(100000, 0, 0.9999);
  EXPECT_EQ(c.posterior_a(), 100001.0);
  EXPECT_EQ(c.posterior_b(), 1.0);
  EXPECT_NEAR(c.confidence, 1.0 - std::pow(0.9999, 100001), 1e-12);
}

TEST(StateIsFeasible, ControllableWideBoxIsFeasible) {
  const auto model = constant_model(scalar_modes(1.0), ControlBox{{-1e6}, {1e6}});
  FeasibilitySetup s;
  s.model = &model;
  for (SolverKind k : {SolverKind::additive, SolverKind::multiplicative}) {
    s.solver = k;
    EXPECT_TRUE(state_is_feasible(Vector{3.0}, Affine1d{}, s).feasible);
  }
}

TEST(StateIsFeasible, UncontrollableIsInfeasible) {
  const auto model = constant_model(scalar_modes(0.0), ControlBox{{-1}, {1}});
  FeasibilitySetup s;
  s.model = &model;
  for (SolverKind k : {SolverKind::additive, SolverKind::multiplicative}) {
    s.solver = k;
    const auto o = state_is_feasible(Vector{0.5}, Affine1d{}, s);
    EXPECT_FALSE(o.feasible);
    EXPECT_FALSE(o.cause.empty());
  }
}

TEST(StateIsFeasible, MissingModelThrows) {
  EXPECT_THROW(state_is_feasible(Vector{0.5}, Affine1d{}, FeasibilitySetup{}), std::invalid_argument);
}

TEST(SampleFeasibility, SingleFeasibleSample) {
  const auto model = constant_model(scalar_modes(1.0), ControlBox{{-1e6}, {1e6}});
  FeasibilitySetup s;
  s.model = &model;
  s.solver = SolverKind::additive;
  const auto c = sample_feasibility({{-1.0}, {1.0}}, 1, 5, Affine1d{}, s);
  EXPECT_EQ(c.n_feasible, 1u);
  EXPECT_EQ(c.n_infeasible, 0u);
  EXPECT_THROW(sample_feasibility({{-1.0}, {1.0}}, 0, 5, Affine1d{}, s), std::invalid_argument);
}

TEST(SampleFeasibility, HandIndexHasInfeasibleStates) {
  const auto model = segway::segway_additive_model(segway::SegwayParams{}, segway::reference_additive_modes());
  FeasibilitySetup s;
  s.model = &model;
  s.solver = SolverKind::additive;
  const auto c = sample_feasibility(segway_region(), 2000, 74, segway::TiltIndex(segway::kHandIndex), s);
  EXPECT_GT(c.n_infeasible, 0u);
  EXPECT_EQ(c.n_feasible + c.n_infeasible, 2000u);
}

TEST(SampleFeasibility, IndependentOfThreadCount) {
  const auto model = segway::segway_multiplicative_model(segway::SegwayParams{}, segway::reference_motor_modes());
  FeasibilitySetup s;
  s.model = &model;
  const segway::TiltIndex idx(segway::kHandIndex);
  const auto one = sample_feasibility(segway_region(), 300, 75, idx, s, 1);
  const auto four = sample_feasibility(segway_region(), 300, 75, idx, s, 4);
  ASSERT_EQ(one.samples.size(), four.samples.size());
  EXPECT_EQ(one.n_feasible, four.n_feasible);
  for (std::size_t i = 0; i < one.samples.size(); ++i) {
    EXPECT_EQ(one.samples[i].state, four.samples[i].state);
    EXPECT_EQ(one.samples[i].feasible, four.samples[i].feasible);
    EXPECT_EQ(one.samples[i].cause, four.samples[i].cause);
  }
}

TEST(UniformStates, PrefixStableAndInsideRegion) {
  const auto a = uniform_states(segway_region(), 10, 76), b = uniform_states(segway_region(), 50, 76);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  for (const auto& x : b) {
    EXPECT_EQ(x[0], 0.0);
    EXPECT_LE(std::abs(x[1]), 0.2);
    EXPECT_LE(std::abs(x[2]), 3.0);
  }
  EXPECT_THROW(uniform_states({{1.0}, {0.0}}, 1, 0), std::invalid_argument);
}
