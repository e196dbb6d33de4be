#ifndef CALMAXSPRT_ERROR_MODEL_HPP
#define CALMAXSPRT_ERROR_MODEL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calmaxsprt/errors.hpp"
#include "calmaxsprt/likelihood.hpp"
#include "calmaxsprt/nelder_mead.hpp"
#include "calmaxsprt/quadrature.hpp"
#include "calmaxsprt/random.hpp"

namespace calmaxsprt {

/// Normal systematic-error distribution N(mean, sd^2) on the log effect scale.
struct ErrorModel {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n_controls = 0;
  std::size_t n_dropped = 0;
  bool converged = true;

  /// The degenerate model under which calibration reduces to the uncalibrated test.
  static ErrorModel null() { return {}; }

  friend bool operator==(const ErrorModel&, const ErrorModel&) = default;
};

struct FitOptions {
  double tolerance = 1e-6;  // on the objective spread across the simplex
  int max_iterations = 5000;
};

/// sd is optimized as log(sd + kSdOffset) so the optimizer can reach the sd = 0 boundary.
inline constexpr double kSdOffset = 1e-6;

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

inline double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kHalfLog2Pi;
}

/// A profile plus the local normal approximation used to centre the quadrature.
struct PreparedProfile {
  const LikelihoodProfile* profile = nullptr;
  double estimate = 0.0;
  double se = 1.0;
  bool has_local = false;
};

inline PreparedProfile prepare(const LikelihoodProfile& profile) {
  PreparedProfile prepared{&profile};
  try {
    const Estimate est = mle_and_se(profile);
    prepared.estimate = est.point_estimate;
    prepared.se = est.standard_error;
    prepared.has_local = true;
  } catch (const UninformativeProfile&) {
  } catch (const CurvatureError&) {
  }
  return prepared;
}

/// log of the integral of L(tau) * phi(tau | mean, sd) d tau.
inline double log_contribution(const PreparedProfile& p, double mean, double sd) {
  if (const auto* na = std::get_if<NormalApprox>(&p.profile->form()))
    return log_normal_pdf(na->point_estimate, mean,
                          std::sqrt(sd * sd + na->standard_error * na->standard_error));
  if (sd <= 0.0) return p.profile->log_likelihood(mean);

  // Gauss-Hermite against phi(tau | centre, scale), where (centre, scale) is the product of
  // the local normal approximation and the error distribution; the remaining ratio is smooth.
  double centre = mean, scale = sd;
  if (p.has_local) {
    const double precision = 1.0 / (p.se * p.se) + 1.0 / (sd * sd);
    scale = 1.0 / std::sqrt(precision);
    centre = (p.estimate / (p.se * p.se) + mean / (sd * sd)) / precision;
  }
  const auto& rule = gauss_hermite_64();
  const std::size_t n = rule.nodes.size();
  thread_local std::vector<double> terms;
  terms.resize(n);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = centre + std::numbers::sqrt2 * scale * rule.nodes[i];
    const double log_g = p.profile->log_likelihood(tau) + log_normal_pdf(tau, mean, sd) -
                         log_normal_pdf(tau, centre, scale);
    terms[i] = std::log(rule.weights[i]) + log_g;
    peak = std::max(peak, terms[i]);
  }
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - peak);
  return peak + std::log(sum) - 0.5 * std::log(std::numbers::pi);
}

inline double marginal_log_likelihood(double mean, double sd, std::span<const PreparedProfile> profiles) {
  double total = 0.0;
  for (const auto& p : profiles) total += log_contribution(p, mean, sd);
  return total;
}

inline ErrorModel fit_prepared(std::span<const PreparedProfile> usable, std::size_t n_dropped,
                               const FitOptions& options) {
  if (usable.size() < 2)
    throw FitError("need at least 2 usable negative-control profiles, have " +
                   std::to_string(usable.size()));

  auto objective = [&](const std::array<double, 2>& x) {
    const double sd = std::max(0.0, std::exp(x[1]) - kSdOffset);
    const double value = -marginal_log_likelihood(x[0], sd, usable);
    return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
  };

  double sum = 0.0;
  for (const auto& p : usable) sum += p.estimate;
  const double sample_mean = sum / static_cast<double>(usable.size());
  double ss = 0.0;
  for (const auto& p : usable) ss += (p.estimate - sample_mean) * (p.estimate - sample_mean);
  const double sample_sd = std::sqrt(ss / static_cast<double>(usable.size() - 1));

  const std::array<std::array<double, 2>, 3> starts = {{
      {0.0, std::log(0.1 + kSdOffset)},
      {0.0, std::log(0.5 + kSdOffset)},
      {sample_mean, std::log(sample_sd + kSdOffset)},
  }};
  constexpr std::array<double, 2> step = {0.1, 1.0};

  std::optional<SimplexResult<2>> best;
  for (const auto& start : starts) {
    auto run = nelder_mead(objective, start, step, options.tolerance, options.max_iterations);
    // One restart from the optimum guards against a prematurely collapsed simplex.
    auto polished = nelder_mead(objective, run.argmin, step, options.tolerance, options.max_iterations);
    polished.converged = polished.converged && run.converged;
    if (!best || polished.minimum < best->minimum) best = polished;
  }
  if (!std::isfinite(best->minimum)) throw FitError("marginal likelihood is not finite at any start");

  ErrorModel model;
  model.mean = best->argmin[0];
  model.sd = std::max(0.0, std::exp(best->argmin[1]) - kSdOffset);
  model.n_controls = usable.size();
  model.n_dropped = n_dropped;
  model.converged = best->converged;
  return model;
}

}  // namespace detail

/// Sum over profiles of log of the integral of L_i(tau) phi(tau | mean, sd) d tau. Normal
/// approximations integrate in closed form; grids use 64-point Gauss-Hermite, or direct
/// evaluation at sd = 0.
inline double marginal_log_likelihood(double mean, double sd, std::span<const LikelihoodProfile> profiles) {
  if (!(sd >= 0.0) || !std::isfinite(sd) || !std::isfinite(mean))
    throw DomainError("marginal_log_likelihood: need finite mean and sd >= 0");
  double total = 0.0;
  for (const auto& profile : profiles) total += detail::log_contribution(detail::prepare(profile), mean, sd);
  return total;
}

/// Maximum marginal likelihood fit of the systematic-error distribution to negative controls.
/// Unusable profiles (grid maximum on the boundary, non-concave peak) are dropped and counted.
inline ErrorModel fit_error_model(std::span<const LikelihoodProfile> profiles, const FitOptions& options = {}) {
  if (profiles.size() < 2)
    throw InsufficientControls("need at least 2 negative controls, have " + std::to_string(profiles.size()));
  std::vector<detail::PreparedProfile> usable;
  usable.reserve(profiles.size());
  for (const auto& profile : profiles) {
    auto prepared = detail::prepare(profile);
    if (prepared.has_local) usable.push_back(prepared);
  }
  return detail::fit_prepared(usable, profiles.size() - usable.size(), options);
}

/// Result of one leave-one-out fit; `model` is empty and `error` set when that fit failed.
struct LooFit {
  std::optional<ErrorModel> model;
  std::string error;
};

/// For each profile i, the model fitted on every other profile. Output order follows input.
inline std::vector<LooFit> leave_one_out_models(std::span<const LikelihoodProfile> profiles,
                                                const FitOptions& options = {}, unsigned workers = 1) {
  if (profiles.size() < 3)
    throw InsufficientControls("leave-one-out needs at least 3 negative controls, have " +
                               std::to_string(profiles.size()));
  std::vector<detail::PreparedProfile> prepared;
  prepared.reserve(profiles.size());
  for (const auto& profile : profiles) prepared.push_back(detail::prepare(profile));

  std::vector<LooFit> fits(profiles.size());
  parallel_for(profiles.size(), workers, [&](std::size_t i) {
    std::vector<detail::PreparedProfile> usable;
    usable.reserve(prepared.size());
    for (std::size_t j = 0; j < prepared.size(); ++j)
      if (j != i && prepared[j].has_local) usable.push_back(prepared[j]);
    try {
      fits[i].model = detail::fit_prepared(usable, profiles.size() - 1 - usable.size(), options);
    } catch (const std::exception& e) {
      fits[i].error = e.what();
    }
  });
  return fits;
}

}  // namespace calmaxsprt

#endif
