#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace cppi::math {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

/// Standard normal cdf, accurate in both tails.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

/// log Phi(x); switches to the asymptotic Mills-ratio series deep in the left tail.
inline double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(norm_cdf(x));
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// exp(a) * Phi(x) without intermediate overflow/underflow.
inline double exp_times_norm_cdf(double a, double x) {
  if (x > -30.0 && a < 700.0) {
    const double p = norm_cdf(x);
    if (p > 1e-280) return std::exp(a) * p;
  }
  return std::exp(a + log_norm_cdf(x));
}

/// Upper-tail quantile: returns z with P[Z > z] = tail.
inline double norm_upper_quantile(double tail) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * tail);
}

inline double norm_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// (exp(x) - 1) / x, continuous at 0.
inline double expm1_over_x(double x) {
  if (std::abs(x) < 1e-8) return 1.0 + 0.5 * x;
  return std::expm1(x) / x;
}

}  // namespace cppi::math
