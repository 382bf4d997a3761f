#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace d2d {

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double logsumexp(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

// Max-subtracted softmax; safe for large |x|.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  Eigen::VectorXd e = (x.array() - m).exp();
  return e / e.sum();
}

inline double logistic(double u) {
  if (u >= 0.0) {
    const double e = std::exp(-u);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("logit: argument must lie in (0,1)");
  return std::log(p) - std::log1p(-p);
}

inline double softplus(double u) {
  if (u > 0.0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

inline double normal_logpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

// Support x > 0; density of |Y| with Y ~ N(0, sigma^2).
inline double halfnormal_logpdf(double x, double sigma) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(2.0) + normal_logpdf(x, 0.0, sigma);
}

inline double lognormal_logpdf(double x, double mu, double sigma) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return normal_logpdf(std::log(x), mu, sigma) - std::log(x);
}

inline double logitnormal_logpdf(double x, double mu, double sigma) {
  if (!(x > 0.0 && x < 1.0)) return -std::numeric_limits<double>::infinity();
  return normal_logpdf(logit(x), mu, sigma) - std::log(x) - std::log1p(-x);
}

// Type-7 interpolated quantile of an already sorted vector.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = q * (double(sorted.size()) - 1.0);
  const std::size_t lo = std::size_t(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = h - double(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample KS test against U(0,1) with the small-sample corrected statistic
// lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) * D.
inline double ks_uniform_pvalue(std::vector<double> sample) {
  if (sample.empty()) throw std::invalid_argument("ks test: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = double(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double x = sample[i];
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("ks test: sample outside [0,1]");
    d = std::max(d, std::abs(double(i + 1) / n - x));
    d = std::max(d, std::abs(x - double(i) / n));
  }
  const double sqn = std::sqrt(n);
  return kolmogorov_q((sqn + 0.12 + 0.11 / sqn) * d);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) throw std::invalid_argument("variance: need at least two points");
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

}  // namespace d2d
