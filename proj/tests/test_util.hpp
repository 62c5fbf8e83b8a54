#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dcse/tensor.hpp"

namespace dcse::testing {

template <class T>
Tensor<T> random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline Mask random_mask(std::size_t n, std::mt19937_64& rng) {
  Mask m(n, 0);
  std::bernoulli_distribution on(0.6);
  for (auto& v : m) v = on(rng) ? 1 : 0;
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  return m;
}

}  // namespace dcse::testing
