#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "qgan/tensor.hpp"

namespace testing {

inline qgan::TensorD random_tensor(const qgan::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(qgan::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return qgan::TensorD(shape, std::move(v));
}

// Values bounded away from zero so kinked ops stay on one smooth branch under
// finite differences.
inline qgan::TensorD random_away_from_zero(const qgan::Shape& shape, std::uint64_t seed, double gap = 0.05) {
  auto t = random_tensor(shape, seed);
  for (auto& x : t.data_mut())
    if (std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
  return t;
}

}  // namespace testing
