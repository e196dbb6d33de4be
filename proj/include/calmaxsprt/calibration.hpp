#ifndef CALMAXSPRT_CALIBRATION_HPP
#define CALMAXSPRT_CALIBRATION_HPP

#include <algorithm>
#include <cmath>
#include <numbers>

#include "calmaxsprt/error_model.hpp"
#include "calmaxsprt/errors.hpp"

namespace calmaxsprt {

inline constexpr double kMinPValue = 1e-300;
inline constexpr double kMaxPValue = 1.0 - 1e-16;

/// Upper tail of the standard normal, 1 - Phi(z).
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

inline double clamp_p(double p) { return std::clamp(p, kMinPValue, kMaxPValue); }

/// One-sided p-value for H1: beta > 0, treating the estimate as N(beta, se^2).
inline double uncalibrated_p(double beta_hat, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) throw DomainError("uncalibrated_p: se must be positive");
  return clamp_p(normal_upper_tail(beta_hat / se));
}

/// One-sided p-value against the empirical null N(mean, sd^2 + se^2). Small p means the
/// estimate lies far above the systematic-error distribution.
inline double calibrated_p(double beta_hat, double se, const ErrorModel& model) {
  if (!(se > 0.0) || !std::isfinite(se)) throw DomainError("calibrated_p: se must be positive");
  if (!(model.sd >= 0.0)) throw DomainError("calibrated_p: error model sd must be >= 0");
  const double scale = model.sd == 0.0 ? se : std::sqrt(model.sd * model.sd + se * se);
  return clamp_p(normal_upper_tail((beta_hat - model.mean) / scale));
}

}  // namespace calmaxsprt

#endif
