#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nnqc/errors.hpp"

namespace nnqc {

// Percentile with linear interpolation between order statistics
// (rank = p/100 * (n-1)). `values` need not be sorted.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ShapeError("percentile of empty set");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("mean of empty set");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  return percentile(std::move(v), 50.0);
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw ShapeError("variance needs >= 2 samples");
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace nnqc
