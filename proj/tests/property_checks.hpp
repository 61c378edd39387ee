#pragma once

// Seeded property-test driver: each case gets its own reproducible stream,
// and a failure reports the case index so it can be replayed alone.

#include <cstdint>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "mmrssa/random.hpp"

namespace proptest {

inline void for_all(int cases, std::uint64_t seed, const std::function<void(mmrssa::Rng&)>& body) {
  for (int i = 0; i < cases; ++i) {
    SCOPED_TRACE("property case " + std::to_string(i) + " (seed " + std::to_string(seed) + ")");
    mmrssa::Rng rng = mmrssa::make_stream(seed, static_cast<std::uint64_t>(i));
    body(rng);
    if (::testing::Test::HasFatalFailure()) return;
  }
}

inline double uniform(mmrssa::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(mmrssa::Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace proptest
