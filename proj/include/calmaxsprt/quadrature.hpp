#ifndef CALMAXSPRT_QUADRATURE_HPP
#define CALMAXSPRT_QUADRATURE_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "calmaxsprt/errors.hpp"

namespace calmaxsprt {

/// Gauss-Hermite rule for the weight exp(-x^2). Nodes ascend.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Roots by Newton iteration on the orthonormal Hermite recurrence, started from the usual
/// asymptotic guesses for the largest roots and extrapolated inward.
inline GaussHermiteRule gauss_hermite(std::size_t n) {
  if (n < 1) throw DomainError("gauss_hermite: order must be positive");
  constexpr double kEps = 1e-14;
  constexpr int kMaxIter = 100;
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  const double dn = static_cast<double>(n);

  std::vector<double> x(n), w(n);
  const std::size_t half = (n + 1) / 2;
  double z = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * dn + 1.0) - 1.85575 * std::pow(2.0 * dn + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(dn, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double dj = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / (dj + 1.0)) * p2 - std::sqrt(dj / (dj + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * dn) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::fabs(z - z1) <= kEps) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  // Built largest-first; flip to ascending.
  GaussHermiteRule rule;
  rule.nodes.assign(x.rbegin(), x.rend());
  rule.weights.assign(w.rbegin(), w.rend());
  return rule;
}

/// The 64-point rule, computed once.
inline const GaussHermiteRule& gauss_hermite_64() {
  static const GaussHermiteRule rule = gauss_hermite(64);
  return rule;
}

}  // namespace calmaxsprt

#endif
