#include <cmath>

#include <gtest/gtest.h>

#include "mmrssa/cert.hpp"
#include "mmrssa/safety.hpp"
#include "property_checks.hpp"

using namespace mmrssa;
using namespace mmrssa::segway;

TEST(Phi0, Values) {
  EXPECT_DOUBLE_EQ(phi0(Vector{0, 0, 0, 0}), -0.1);
  EXPECT_DOUBLE_EQ(phi0(Vector{0, 0.1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(phi0(Vector{0, -0.25, 0, 0}), 0.15);
}

TEST(Phi, HandIndexAtUpright) { EXPECT_NEAR(phi(Vector{0, 0, 0, 0}, kHandIndex), -0.099, 1e-15); }

TEST(Phi, BoundaryCoincidence) { EXPECT_NEAR(phi(Vector{0, 0.1, 0, 0}, {1.0, 1.0, 0.0}), 0.0, 1e-15); }

TEST(Phi, LearnedParamsRegression) {
  const SafetyIndexParams p{0.15, 4.17, 0.55};
  const double oracle = std::max(-0.05, -std::pow(0.1, 0.15) + std::pow(0.05, 0.15) + 4.17 * 0.1 + 0.55);
  EXPECT_NEAR(phi(Vector{0, 0.05, 0, 0.1}, p), oracle, 1e-14);
  EXPECT_NEAR(phi(Vector{0, 0.05, 0, 0.1}, p), 0.89709068129545355, 1e-12);  // frozen regression constant
}

TEST(GradPhi, FirstBranch) {
  // large tilt with strongly negative rate: φ₀ dominates
  const Vector g = grad_phi(Vector{0, 0.15, 0, -3.0}, kHandIndex);
  EXPECT_EQ(g, (Vector{0, 1, 0, 0}));
}

TEST(GradPhi, SecondBranchLinearAlpha) {
  const SafetyIndexParams p{1.0, 2.5, 0.01};
  const Vector g = grad_phi(Vector{0, 0.05, 0, 0.2}, p);
  EXPECT_EQ(g, (Vector{0, 1, 0, 2.5}));
}

TEST(GradPhiProperty, MatchesCentralDifferences) {
  int checked = 0;
  proptest::for_all(400, 31, [&](Rng& rng) {
    const SafetyIndexParams p{proptest::uniform(rng, 0.1, 5), proptest::uniform(rng, 0.1, 5),
                              proptest::uniform(rng, 0.001, 1)};
    Vector x{0, proptest::uniform(rng, -0.2, 0.2), proptest::uniform(rng, -3, 3), proptest::uniform(rng, -3, 3)};
    const double h = 1e-6;
    // exclude the tie and sign-flip sets by a margin
    if (std::abs(x[1]) < 1e-3 || std::abs(phi0(x) - phi_designed(x, p)) < 1e-7 + 1e-3) return;
    const Vector g = grad_phi(x, p);
    for (std::size_t a = 0; a < 4; ++a) {
      Vector xp = x, xm = x;
      xp[a] += h;
      xm[a] -= h;
      const double fd = (phi(xp, p) - phi(xm, p)) / (2 * h);
      EXPECT_NEAR(g[a], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "coordinate " << a;
    }
    ++checked;
  });
  EXPECT_GT(checked, 300);
}

TEST(PhiProperty, ZeroSublevelInsideSpecification) {
  const auto states = uniform_states({{0, -0.3, -3, -3}, {0, 0.3, 3, 3}}, 100000, 32);
  proptest::for_all(20, 33, [&](Rng& rng) {
    const SafetyIndexParams p{proptest::uniform(rng, 0.1, 5), proptest::uniform(rng, 0.1, 5),
                              proptest::uniform(rng, 0.001, 1)};
    std::size_t bad = 0;
    for (std::size_t i = 0; i < states.size(); i += 20)
      if (phi(states[i], p) <= 0.0 && phi0(states[i]) > 0.0) ++bad;
    EXPECT_EQ(bad, 0u);
  });
  std::size_t bad = 0;
  for (const auto& x : states)
    if (phi(x, kHandIndex) <= 0.0 && phi0(x) > 0.0) ++bad;
  EXPECT_EQ(bad, 0u);
}

TEST(Gamma, Values) {
  EXPECT_EQ(gamma_eval(0.0, {}), 0.0);
  EXPECT_DOUBLE_EQ(gamma_eval(0.2, {1.0}), 0.2);
}

TEST(GammaProperty, OddLinearIncreasingSignPreserving) {
  proptest::for_all(1000, 34, [](Rng& rng) {
    const GammaSpec g{proptest::uniform(rng, 0.01, 20)};
    const double a = proptest::uniform(rng, -5, 5), b = proptest::uniform(rng, -5, 5);
    EXPECT_DOUBLE_EQ(gamma_eval(-a, g), -gamma_eval(a, g));
    EXPECT_NEAR(gamma_eval(a + b, g), gamma_eval(a, g) + gamma_eval(b, g), 1e-12);
    if (a < b) {
      EXPECT_LT(gamma_eval(a, g), gamma_eval(b, g));
    }
    EXPECT_EQ(gamma_eval(a, g) > 0.0, a > 0.0);
  });
}

TEST(SafetyIndexParams, Validation) {
  EXPECT_THROW((SafetyIndexParams{0.0, 1.0, 0.1}.validate()), std::invalid_argument);
  EXPECT_THROW((GammaSpec{-1.0}.validate()), std::invalid_argument);
  EXPECT_THROW(TiltIndex{}.evaluate(Vector{0, 0}), DimensionError);
}
