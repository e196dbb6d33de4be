#ifndef CALMAXSPRT_TESTS_ORACLES_HPP
#define CALMAXSPRT_TESTS_ORACLES_HPP

// Independent reference computations for the test suites. Nothing here calls into the
// library's numeric paths.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

namespace oracle {

inline double log_dpois(std::int64_t k, double lambda) {
  return static_cast<double>(k) * std::log(lambda) - lambda - std::lgamma(static_cast<double>(k) + 1.0);
}

inline double log_dbinom(std::int64_t k, std::int64_t n, double q) {
  const double kk = static_cast<double>(k), nn = static_cast<double>(n);
  double out = std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
  if (k > 0) out += kk * std::log(q);
  if (k < n) out += (nn - kk) * std::log1p(-q);
  return out;
}

/// LLR as a ratio of Poisson pmfs at the MLE rate and the null rate.
inline double poisson_llr_pmf_ratio(std::int64_t o, double e) {
  if (static_cast<double>(o) <= e) return 0.0;
  return log_dpois(o, static_cast<double>(o)) - log_dpois(o, e);
}

inline double binomial_llr_pmf_ratio(std::int64_t k, std::int64_t n, double p) {
  const double q = static_cast<double>(k) / static_cast<double>(n);
  if (q <= p) return 0.0;
  return log_dbinom(k, n, q) - log_dbinom(k, n, p);
}

/// Standard normal CDF by composite Simpson integration of the density from -12 to z.
inline double normal_cdf_simpson(double z) {
  const double lo = -12.0;
  if (z <= lo) return 0.0;
  const int n = 200000;
  const double h = (z - lo) / n;
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  double s = pdf(lo) + pdf(z);
  for (int i = 1; i < n; ++i) s += pdf(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct ExactCv {
  double cv = 0.0;
  double attained_alpha = 0.0;
};

/// One-look critical value by exhaustive enumeration of a discrete LLR distribution given as
/// (llr, probability) pairs: the smallest support value v (or 0) with P(LLR > v) <= alpha.
inline ExactCv cv_from_support(const std::vector<std::pair<double, double>>& support, double alpha) {
  std::vector<double> candidates{0.0};
  for (const auto& [v, prob] : support) candidates.push_back(v);
  double best = std::numeric_limits<double>::infinity();
  double attained = 0.0;
  for (double c : candidates) {
    double tail = 0.0;
    for (const auto& [v, prob] : support)
      if (v > c) tail += prob;
    if (tail <= alpha && c < best) {
      best = c;
      attained = tail;
    }
  }
  return {best, attained};
}

/// One-look Poisson cv; counts drawn from Poisson(rate), LLR against expected.
inline ExactCv poisson_one_look_cv(double expected, double rate, double alpha) {
  std::vector<std::pair<double, double>> support;
  for (std::int64_t o = 0; o < 2000; ++o) {
    const double prob = std::exp(log_dpois(o, rate));
    support.emplace_back(poisson_llr_pmf_ratio(o, expected), prob);
    if (static_cast<double>(o) > rate && prob < 1e-18) break;
  }
  return cv_from_support(support, alpha);
}

inline ExactCv binomial_one_look_cv(std::int64_t n, double p, double alpha) {
  std::vector<std::pair<double, double>> support;
  for (std::int64_t k = 0; k <= n; ++k)
    support.emplace_back(binomial_llr_pmf_ratio(k, n, p), std::exp(log_dbinom(k, n, p)));
  return cv_from_support(support, alpha);
}

/// Closed-form objective for normal-approximation controls.
inline double normal_objective(double mu, double sigma, const std::vector<double>& est,
                               const std::vector<double>& se) {
  double total = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double v = sigma * sigma + se[i] * se[i];
    total += -0.5 * (est[i] - mu) * (est[i] - mu) / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
  }
  return total;
}

/// Brute-force 2-D grid search over mu in [-1, 1], sigma in [0, 1] at the given step.
inline std::pair<double, double> grid_search_fit(const std::vector<double>& est, const std::vector<double>& se,
                                                 double step = 0.005) {
  double best = -std::numeric_limits<double>::infinity();
  std::pair<double, double> arg{0.0, 0.0};
  const int nm = static_cast<int>(std::lround(2.0 / step));
  const int ns = static_cast<int>(std::lround(1.0 / step));
  for (int i = 0; i <= nm; ++i) {
    const double mu = -1.0 + i * step;
    for (int j = 0; j <= ns; ++j) {
      const double sigma = j * step;
      const double v = normal_objective(mu, sigma, est, se);
      if (v > best) {
        best = v;
        arg = {mu, sigma};
      }
    }
  }
  return arg;
}

/// log of the trapezoid integral over grid points of exp(ll) * phi(x | mu, sigma).
inline double trapezoid_log_marginal(const std::vector<double>& x, const std::vector<double>& ll, double mu,
                                     double sigma) {
  double sum = 0.0;
  auto f = [&](std::size_t i) {
    const double z = (x[i] - mu) / sigma;
    return std::exp(ll[i] - 0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  for (std::size_t i = 1; i < x.size(); ++i) sum += 0.5 * (f(i - 1) + f(i)) * (x[i] - x[i - 1]);
  return std::log(sum);
}

}  // namespace oracle

#endif
