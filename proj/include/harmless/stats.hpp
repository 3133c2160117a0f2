#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "harmless/error.hpp"

namespace harmless::stats {

// Percentile with linear interpolation between closest ranks
// (position p * (n - 1) in the sorted sample).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

inline double median(const std::vector<double>& values) { return percentile(values, 0.5); }

inline double iqr(const std::vector<double>& values) { return percentile(values, 0.75) - percentile(values, 0.25); }

}  // namespace harmless::stats
