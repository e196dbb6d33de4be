#ifndef CALMAXSPRT_LIKELIHOOD_HPP
#define CALMAXSPRT_LIKELIHOOD_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "calmaxsprt/errors.hpp"

namespace calmaxsprt {

// ---------------------------------------------------------------------------------------------
// Count data for the two surveillance models. Counts are cumulative up to a look.
// ---------------------------------------------------------------------------------------------

struct PoissonCounts {
  std::int64_t observed = 0;
  double expected = 1.0;
};

/// Exposed cases among `total` cases; under the null each case is exposed with probability p.
struct BinomialCounts {
  std::int64_t exposed = 0;
  std::int64_t total = 1;
  double null_proportion = 0.5;
};

using CountData = std::variant<PoissonCounts, BinomialCounts>;

inline void validate(const CountData& data) {
  if (const auto* pc = std::get_if<PoissonCounts>(&data)) {
    if (pc->observed < 0) throw DomainError("observed count must be nonnegative");
    if (!std::isfinite(pc->expected) || pc->expected <= 0.0)
      throw DomainError("expected count must be positive and finite");
  } else {
    const auto& bc = std::get<BinomialCounts>(data);
    if (bc.total < 1) throw DomainError("binomial total must be at least 1");
    if (bc.exposed < 0 || bc.exposed > bc.total)
      throw DomainError("exposed count must lie in [0, total]");
    if (!(bc.null_proportion > 0.0 && bc.null_proportion < 1.0))
      throw DomainError("null proportion must lie in (0, 1)");
  }
}

// ---------------------------------------------------------------------------------------------
// One-sided log-likelihood ratios (MLE against the null), floored at zero.
// ---------------------------------------------------------------------------------------------

/// Poisson LLR of the rate MLE against the null rate `expected`.
inline double poisson_llr(double observed, double expected) {
  if (!std::isfinite(observed) || !std::isfinite(expected) || observed < 0.0 || expected <= 0.0)
    throw DomainError("poisson_llr: observed must be >= 0 and expected > 0, both finite");
  if (observed <= expected) return 0.0;
  return observed * std::log(observed / expected) + expected - observed;
}

/// Binomial LLR of q = exposed/total against the null proportion p.
inline double binomial_llr(std::int64_t exposed, std::int64_t total, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("binomial_llr: p must lie in (0, 1)");
  if (total < 1 || exposed < 0 || exposed > total)
    throw DomainError("binomial_llr: require 0 <= exposed <= total and total >= 1");
  const double k = static_cast<double>(exposed);
  const double n = static_cast<double>(total);
  const double q = k / n;
  if (q <= p) return 0.0;
  double llr = k * std::log(q / p);
  if (exposed < total) llr += (n - k) * std::log((1.0 - q) / (1.0 - p));
  return llr;
}

inline double count_llr(const CountData& data) {
  validate(data);
  if (const auto* pc = std::get_if<PoissonCounts>(&data))
    return poisson_llr(static_cast<double>(pc->observed), pc->expected);
  const auto& bc = std::get<BinomialCounts>(data);
  return binomial_llr(bc.exposed, bc.total, bc.null_proportion);
}

/// Exposure probability after tilting the null odds p/(1-p) by exp(log_odds_ratio).
inline double tilted_proportion(double p, double log_odds_ratio) {
  const double r = std::exp(log_odds_ratio);
  return p * r / (1.0 + p * (r - 1.0));
}

// ---------------------------------------------------------------------------------------------
// Likelihood profiles of the log effect size
// ---------------------------------------------------------------------------------------------

struct Estimate {
  double point_estimate = 0.0;
  double standard_error = 1.0;
};

struct NormalApprox {
  double point_estimate = 0.0;
  double standard_error = 1.0;
};

struct GridLikelihood {
  std::vector<double> points;
  std::vector<double> log_likelihoods;
};

struct GridSpec {
  double lower = -4.0;
  double upper = 4.0;
  std::size_t points = 1000;
};

class LikelihoodProfile {
 public:
  using Form = std::variant<NormalApprox, GridLikelihood>;

  static LikelihoodProfile normal(std::string outcome_id, double point_estimate,
                                  double standard_error) {
    if (!std::isfinite(point_estimate))
      throw DomainError("profile '" + outcome_id + "': point estimate must be finite");
    if (!std::isfinite(standard_error) || standard_error <= 0.0)
      throw DomainError("profile '" + outcome_id + "': standard error must be positive");
    return LikelihoodProfile(std::move(outcome_id), NormalApprox{point_estimate, standard_error});
  }

  static LikelihoodProfile grid(std::string outcome_id, std::vector<double> points,
                                std::vector<double> log_likelihoods) {
    if (points.size() != log_likelihoods.size())
      throw DomainError("profile '" + outcome_id + "': grid and log-likelihoods differ in length");
    if (points.size() < 3)
      throw DomainError("profile '" + outcome_id + "': grid needs at least 3 points");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!std::isfinite(points[i]) || !std::isfinite(log_likelihoods[i]))
        throw DomainError("profile '" + outcome_id + "': non-finite grid value");
      if (i > 0 && !(points[i] > points[i - 1]))
        throw DomainError("profile '" + outcome_id + "': grid points must be strictly ascending");
    }
    return LikelihoodProfile(std::move(outcome_id),
                             GridLikelihood{std::move(points), std::move(log_likelihoods)});
  }

  const std::string& outcome_id() const noexcept { return outcome_id_; }
  const Form& form() const noexcept { return form_; }
  bool is_grid() const noexcept { return std::holds_alternative<GridLikelihood>(form_); }

  /// Index of the grid maximum; ties resolve to the smallest log effect size.
  std::size_t grid_argmax() const {
    const auto& g = std::get<GridLikelihood>(form_);
    return static_cast<std::size_t>(
        std::max_element(g.log_likelihoods.begin(), g.log_likelihoods.end()) -
        g.log_likelihoods.begin());
  }

  /// Usable for fitting: normal approximations always; grids when the maximum is interior.
  bool usable() const {
    if (!is_grid()) return true;
    const std::size_t i = grid_argmax();
    return i > 0 && i + 1 < std::get<GridLikelihood>(form_).points.size();
  }

  /// Log-likelihood at `beta`. Normal approximations use the normalized density of the
  /// estimate; grids use a natural cubic spline, extended linearly beyond the end points.
  double log_likelihood(double beta) const {
    if (const auto* na = std::get_if<NormalApprox>(&form_)) {
      const double z = (na->point_estimate - beta) / na->standard_error;
      return -0.5 * z * z - std::log(na->standard_error) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    const auto& g = std::get<GridLikelihood>(form_);
    const auto& x = g.points;
    const auto& y = g.log_likelihoods;
    const auto& m = spline_;
    if (beta <= x.front()) {
      const double h = x[1] - x[0];
      const double slope = (y[1] - y[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0;
      return y.front() + slope * (beta - x.front());
    }
    if (beta >= x.back()) {
      const std::size_t n = x.size();
      const double h = x[n - 1] - x[n - 2];
      const double slope = (y[n - 1] - y[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
      return y.back() + slope * (beta - x.back());
    }
    const std::size_t hi = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), beta) - x.begin());
    const std::size_t lo = hi - 1;
    const double h = x[hi] - x[lo];
    const double a = (x[hi] - beta) / h;
    const double b = 1.0 - a;
    return a * y[lo] + b * y[hi] + ((a * a * a - a) * m[lo] + (b * b * b - b) * m[hi]) * h * h / 6.0;
  }

 private:
  LikelihoodProfile(std::string id, Form form) : outcome_id_(std::move(id)), form_(std::move(form)) {
    if (const auto* g = std::get_if<GridLikelihood>(&form_)) spline_ = natural_spline(g->points, g->log_likelihoods);
  }

  /// Second derivatives of the natural cubic spline through (x, y) (tridiagonal solve).
  static std::vector<double> natural_spline(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<double> m(n, 0.0), u(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double sig = (x[i] - x[i - 1]) / (x[i + 1] - x[i - 1]);
      const double p = sig * m[i - 1] + 2.0;
      m[i] = (sig - 1.0) / p;
      const double d = (y[i + 1] - y[i]) / (x[i + 1] - x[i]) - (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
      u[i] = (6.0 * d / (x[i + 1] - x[i - 1]) - sig * u[i - 1]) / p;
    }
    m[n - 1] = 0.0;
    for (std::size_t k = n - 1; k-- > 0;) m[k] = m[k] * m[k + 1] + u[k];
    return m;
  }

  std::string outcome_id_;
  Form form_;
  std::vector<double> spline_;
};

inline std::vector<double> make_grid(const GridSpec& spec) {
  if (spec.points < 3 || !(spec.upper > spec.lower))
    throw DomainError("grid spec needs >= 3 points over a nonempty range");
  std::vector<double> grid(spec.points);
  const double step = (spec.upper - spec.lower) / static_cast<double>(spec.points - 1);
  for (std::size_t i = 0; i < spec.points; ++i) grid[i] = spec.lower + step * static_cast<double>(i);
  return grid;
}

/// Full log-likelihood of the log rate ratio (Poisson) or log exposure odds ratio (binomial).
inline double count_log_likelihood(const CountData& data, double beta) {
  if (const auto* pc = std::get_if<PoissonCounts>(&data)) {
    const double o = static_cast<double>(pc->observed);
    return o * (std::log(pc->expected) + beta) - pc->expected * std::exp(beta) - std::lgamma(o + 1.0);
  }
  const auto& bc = std::get<BinomialCounts>(data);
  const double k = static_cast<double>(bc.exposed);
  const double n = static_cast<double>(bc.total);
  const double p = bc.null_proportion;
  const double log_denominator = std::log1p(p * std::expm1(beta));
  const double log_q = std::log(p) + beta - log_denominator;
  const double log_1mq = std::log1p(-p) - log_denominator;
  const double log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  return log_choose + k * log_q + (n - k) * log_1mq;
}

inline bool informative(const CountData& data) {
  if (const auto* pc = std::get_if<PoissonCounts>(&data)) return pc->observed >= 1;
  const auto& bc = std::get<BinomialCounts>(data);
  return bc.exposed >= 1 && bc.exposed < bc.total;
}

/// Analytic MLE with its Fisher-information standard error.
inline Estimate normal_approx_from_counts(const CountData& data) {
  validate(data);
  if (!informative(data)) throw UninformativeProfile("count data carry no information on the effect");
  if (const auto* pc = std::get_if<PoissonCounts>(&data)) {
    const double o = static_cast<double>(pc->observed);
    return {std::log(o / pc->expected), 1.0 / std::sqrt(o)};
  }
  const auto& bc = std::get<BinomialCounts>(data);
  const double k = static_cast<double>(bc.exposed);
  const double u = static_cast<double>(bc.total - bc.exposed);
  const double p = bc.null_proportion;
  return {std::log(k / u) + std::log((1.0 - p) / p), std::sqrt(1.0 / k + 1.0 / u)};
}

/// Grid profile of the count likelihood. Throws UninformativeProfile for zero events (or all
/// cases exposed) and when the MLE falls outside the grid range.
inline LikelihoodProfile profile_from_counts(std::string outcome_id, const CountData& data,
                                             const GridSpec& spec = {}) {
  validate(data);
  if (!informative(data))
    throw UninformativeProfile("outcome '" + outcome_id + "' has no informative events");
  std::vector<double> grid = make_grid(spec);
  std::vector<double> ll(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) ll[i] = count_log_likelihood(data, grid[i]);
  auto profile = LikelihoodProfile::grid(outcome_id, std::move(grid), std::move(ll));
  if (!profile.usable())
    throw UninformativeProfile("outcome '" + outcome_id + "': MLE lies outside the grid range");
  return profile;
}

/// Point estimate and standard error. Grids report the argmax and the curvature-based
/// standard error 1/sqrt(-d2) from the three-point second difference at the maximum.
inline Estimate mle_and_se(const LikelihoodProfile& profile) {
  if (const auto* na = std::get_if<NormalApprox>(&profile.form()))
    return {na->point_estimate, na->standard_error};
  const auto& g = std::get<GridLikelihood>(profile.form());
  const std::size_t i = profile.grid_argmax();
  if (i == 0 || i + 1 == g.points.size())
    throw UninformativeProfile("profile '" + profile.outcome_id() + "': maximum on grid boundary");
  const double x0 = g.points[i - 1], x1 = g.points[i], x2 = g.points[i + 1];
  const double y0 = g.log_likelihoods[i - 1], y1 = g.log_likelihoods[i], y2 = g.log_likelihoods[i + 1];
  const double d2 = 2.0 * ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0);
  if (!(d2 < 0.0))
    throw CurvatureError("profile '" + profile.outcome_id() + "': log-likelihood not concave at maximum");
  return {x1, 1.0 / std::sqrt(-d2)};
}

/// One-sided LLR read off a profile: log L(max) - log L(0), zero when the estimate is <= 0.
inline double profile_llr(const LikelihoodProfile& profile) {
  if (const auto* na = std::get_if<NormalApprox>(&profile.form())) {
    if (na->point_estimate <= 0.0) return 0.0;
    const double z = na->point_estimate / na->standard_error;
    return 0.5 * z * z;
  }
  const auto& g = std::get<GridLikelihood>(profile.form());
  const std::size_t i = profile.grid_argmax();
  if (g.points[i] <= 0.0) return 0.0;
  return std::max(0.0, g.log_likelihoods[i] - profile.log_likelihood(0.0));
}

}  // namespace calmaxsprt

#endif
