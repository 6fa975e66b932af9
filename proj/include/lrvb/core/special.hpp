#pragma once

#include <cmath>
#include <numbers>

namespace lrvb::special {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

/// log Phi(z). erfc is accurate down to about z = -37; below -30 the
/// asymptotic series of the Mills ratio is used instead.
inline double log_norm_cdf(double z) {
  if (z < -30.0) {
    const double z2 = z * z;
    // Phi(z) ~ phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8)
    const double inv = 1.0 / z2;
    const double series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv * inv * inv * inv;
    return log_normal_pdf(z) - std::log(-z) + std::log(series);
  }
  if (z > 5.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse Mills ratio phi(z)/Phi(z).
inline double hazard(double z) { return std::exp(log_normal_pdf(z) - log_norm_cdf(z)); }

/// First and second derivatives of log Phi(z) with respect to z.
inline double dlog_norm_cdf(double z) { return hazard(z); }
inline double d2log_norm_cdf(double z) {
  const double h = hazard(z);
  return -h * (z + h);
}

inline double log_sum_exp(const double* v, int n) {
  double mx = -INFINITY;
  for (int i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace lrvb::special
