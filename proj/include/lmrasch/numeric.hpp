#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace lmrasch::numeric {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Logistic function, branch-stable for large |x|.
inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x))
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// log(expit(x)) = -log(1 + exp(-x))
inline double log_expit(double x) { return -log1pexp(-x); }

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(exp(d) - 1) for d > 0.
inline double log_expm1(double d) {
  if (d > 30.0) return d + std::log1p(-std::exp(-d));
  return std::log(std::expm1(d));
}

// log(expit(a) - expit(b)) for a > b. Stays finite when both arguments
// saturate on the same side.
inline double log_expit_diff(double a, double b) {
  return b + log_expm1(a - b) - log1pexp(a) - log1pexp(b);
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// 0 * log(0) is taken as 0, which is the convention for expected
// complete-data log-likelihoods.
inline double weighted_log(double weight, double log_value) {
  return weight == 0.0 ? 0.0 : weight * log_value;
}

// Upper tail of the standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace lmrasch::numeric
