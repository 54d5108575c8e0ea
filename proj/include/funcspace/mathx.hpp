#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "funcspace/errors.hpp"

namespace funcspace {

// Numerically stable logistic function. Every code path in the library goes
// through this one definition so alternative routes agree bitwise.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double leaky_relu(double x, double slope) {
  return x > 0.0 ? x : slope * x;
}

// Round-trip through 32-bit storage precision.
inline double quantize_f32(double x) {
  return static_cast<double>(static_cast<float>(x));
}

// Median; even counts average the middle pair.
inline double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median: empty input");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double hi = values[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

inline double median(std::span<const double> values) {
  return median(std::vector<double>(values.begin(), values.end()));
}

}  // namespace funcspace
