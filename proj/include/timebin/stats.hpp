#pragma once

#include <cmath>
#include <cstdint>

namespace timebin {

/// z for a two-sided 95% interval.
inline constexpr double kZ95 = 1.959963984540054;

struct WilsonInterval {
  double low = 0.0;
  double high = 1.0;
};

/// Wilson score interval for a binomial proportion.
inline WilsonInterval wilson_interval(std::uint64_t successes, std::uint64_t trials,
                                      double z = kZ95) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  WilsonInterval w;
  w.low = center - half;
  w.high = center + half;
  if (w.low < 0.0) w.low = 0.0;
  if (w.high > 1.0) w.high = 1.0;
  return w;
}

/// Standard deviation of an empirical binomial proportion.
inline double binomial_sigma(double p, std::uint64_t trials) {
  if (trials == 0) return 1.0;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

}  // namespace timebin
