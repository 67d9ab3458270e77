#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>

#include "timebin/units.hpp"

namespace timebin {

/// Least-squares fit of y = offset + amplitude * cos(w x + phase).
struct SinusoidFit {
  double offset = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;         // radians, in (-pi, pi]
  double angular_freq = 0.0;  // w; period = 2 pi / w
  double offset_se = 0.0;
  double amplitude_se = 0.0;
  double phase_se = 0.0;
  double rss = 0.0;
  std::size_t n_points = 0;
  bool ok = false;
  std::string message;
};

namespace detail {

// y ~ o + C cos(wx) + S sin(wx): normal-equation solve at fixed w.
// Returns false on a singular system.
inline bool linear_harmonic_fit(std::span<const double> x, std::span<const double> y, double w,
                                double out[3], double* rss, double cov[3][3] = nullptr) {
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double r[3] = {0, 0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::cos(w * x[i]);
    const double s = std::sin(w * x[i]);
    const double b[3] = {1.0, c, s};
    for (int j = 0; j < 3; ++j) {
      r[j] += b[j] * y[i];
      for (int k = 0; k < 3; ++k) m[j][k] += b[j] * b[k];
    }
  }
  // Gaussian elimination with partial pivoting on the 3x3 system (and the
  // identity alongside when the covariance factor is requested)
  double a[3][6];
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 3; ++k) a[j][k] = m[j][k];
    for (int k = 0; k < 3; ++k) a[j][3 + k] = (j == k) ? 1.0 : 0.0;
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int j = col + 1; j < 3; ++j)
      if (std::abs(a[j][col]) > std::abs(a[piv][col])) piv = j;
    if (std::abs(a[piv][col]) < 1e-12) return false;
    if (piv != col)
      for (int k = 0; k < 6; ++k) std::swap(a[piv][k], a[col][k]);
    const double inv = 1.0 / a[col][col];
    for (int k = 0; k < 6; ++k) a[col][k] *= inv;
    for (int j = 0; j < 3; ++j) {
      if (j == col) continue;
      const double f = a[j][col];
      for (int k = 0; k < 6; ++k) a[j][k] -= f * a[col][k];
    }
  }
  for (int j = 0; j < 3; ++j) {
    out[j] = 0.0;
    for (int k = 0; k < 3; ++k) out[j] += a[j][3 + k] * r[k];
  }
  if (cov)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) cov[j][k] = a[j][3 + k];
  if (rss) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f = out[0] + out[1] * std::cos(w * x[i]) + out[2] * std::sin(w * x[i]);
      const double d = y[i] - f;
      acc += d * d;
    }
    *rss = acc;
  }
  return true;
}

}  // namespace detail

/// Fit with the angular frequency known (e.g. when the scan axis is already a
/// phase). Standard errors come from the residual variance and (X^T X)^-1.
inline SinusoidFit fit_sinusoid_fixed_freq(std::span<const double> x, std::span<const double> y,
                                           double angular_freq) {
  SinusoidFit fit;
  fit.n_points = x.size();
  fit.angular_freq = angular_freq;
  if (x.size() != y.size() || x.size() < 4) {
    fit.message = "need at least 4 points";
    return fit;
  }
  double beta[3], rss, cov[3][3];
  if (!detail::linear_harmonic_fit(x, y, angular_freq, beta, &rss, cov)) {
    fit.message = "singular normal equations (degenerate sampling)";
    return fit;
  }
  const double C = beta[1], S = beta[2];
  fit.offset = beta[0];
  fit.amplitude = std::hypot(C, S);
  fit.phase = std::atan2(-S, C);
  fit.rss = rss;
  const std::size_t dof = x.size() - 3;
  const double s2 = dof > 0 ? rss / static_cast<double>(dof) : 0.0;
  fit.offset_se = std::sqrt(std::max(0.0, s2 * cov[0][0]));
  if (fit.amplitude > 0.0) {
    const double a2 = fit.amplitude * fit.amplitude;
    const double var_amp =
        (C * C * cov[1][1] + S * S * cov[2][2] + 2.0 * C * S * cov[1][2]) * s2 / a2;
    const double var_ph =
        (S * S * cov[1][1] + C * C * cov[2][2] - 2.0 * C * S * cov[1][2]) * s2 / a2;
    fit.amplitude_se = std::sqrt(std::max(0.0, var_amp));
    fit.phase_se = std::sqrt(std::max(0.0, var_ph)) / fit.amplitude;
  }
  fit.ok = true;
  return fit;
}

/// Fit with the frequency estimated from the data: coarse grid search over
/// periods between ~4 sample spacings and twice the span, then golden-section
/// refinement of the residual sum of squares.
inline SinusoidFit fit_sinusoid(std::span<const double> x, std::span<const double> y) {
  SinusoidFit fail;
  fail.n_points = x.size();
  if (x.size() != y.size() || x.size() < 5) {
    fail.message = "need at least 5 points for a frequency search";
    return fail;
  }
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double span = *hi_it - *lo_it;
  if (!(span > 0.0)) {
    fail.message = "x values are degenerate";
    return fail;
  }
  const double min_spacing = span / static_cast<double>(x.size() - 1);
  const double w_lo = kTwoPi * 0.5 / span;          // half a cycle over the span
  const double w_hi = kTwoPi / (4.0 * min_spacing); // at least 4 samples per cycle
  if (!(w_hi > w_lo)) {
    fail.message = "too few points to bracket a frequency";
    return fail;
  }

  constexpr int kGrid = 2000;
  double best_w = w_lo, best_rss = -1.0;
  for (int i = 0; i <= kGrid; ++i) {
    const double w = w_lo + (w_hi - w_lo) * static_cast<double>(i) / kGrid;
    double beta[3], rss;
    if (!detail::linear_harmonic_fit(x, y, w, beta, &rss)) continue;
    if (best_rss < 0.0 || rss < best_rss) {
      best_rss = rss;
      best_w = w;
    }
  }
  if (best_rss < 0.0) {
    fail.message = "no admissible frequency (degenerate data)";
    return fail;
  }
  const double step = (w_hi - w_lo) / kGrid;
  double a = std::max(w_lo, best_w - step), b = std::min(w_hi, best_w + step);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  auto rss_at = [&](double w) {
    double beta[3], rss;
    return detail::linear_harmonic_fit(x, y, w, beta, &rss) ? rss
                                                            : std::numeric_limits<double>::max();
  };
  double w1 = b - gr * (b - a), w2 = a + gr * (b - a);
  double f1 = rss_at(w1), f2 = rss_at(w2);
  for (int it = 0; it < 60 && (b - a) > 1e-12 * best_w; ++it) {
    if (f1 < f2) {
      b = w2;
      w2 = w1;
      f2 = f1;
      w1 = b - gr * (b - a);
      f1 = rss_at(w1);
    } else {
      a = w1;
      w1 = w2;
      f1 = f2;
      w2 = a + gr * (b - a);
      f2 = rss_at(w2);
    }
  }
  return fit_sinusoid_fixed_freq(x, y, 0.5 * (a + b));
}

}  // namespace timebin
