#ifndef CALMAXSPRT_MAXSPRT_HPP
#define CALMAXSPRT_MAXSPRT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "calmaxsprt/error_model.hpp"
#include "calmaxsprt/errors.hpp"
#include "calmaxsprt/likelihood.hpp"
#include "calmaxsprt/random.hpp"

namespace calmaxsprt {

struct PoissonModel {};

/// Binomial surveillance model; `exposure_proportion` is the null probability that a case is exposed.
struct BinomialModel {
  double exposure_proportion = 0.5;
};

using SurveillanceModel = std::variant<PoissonModel, BinomialModel>;

/// Looks, incremental null expected counts per look, model family and alpha.
class LookSchedule {
 public:
  LookSchedule(SurveillanceModel model, std::vector<double> expected_increments, double alpha)
      : model_(model), increments_(std::move(expected_increments)), alpha_(alpha) {
    if (increments_.empty()) throw DomainError("schedule needs at least one look");
    for (double e : increments_)
      if (!std::isfinite(e) || e <= 0.0) throw DomainError("expected increments must be positive");
    if (!(alpha_ > 0.0 && alpha_ <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
    if (const auto* b = std::get_if<BinomialModel>(&model_))
      if (!(b->exposure_proportion > 0.0 && b->exposure_proportion < 1.0))
        throw DomainError("exposure proportion must lie in (0, 1)");
  }

  std::size_t looks() const noexcept { return increments_.size(); }
  const std::vector<double>& expected_increments() const noexcept { return increments_; }
  const SurveillanceModel& model() const noexcept { return model_; }
  double alpha() const noexcept { return alpha_; }
  bool is_binomial() const noexcept { return std::holds_alternative<BinomialModel>(model_); }
  double exposure_proportion() const { return std::get<BinomialModel>(model_).exposure_proportion; }

  /// Binomial trials per look: increments rounded to the nearest positive integer.
  std::vector<std::int64_t> binomial_trials() const {
    std::vector<std::int64_t> trials(increments_.size());
    for (std::size_t t = 0; t < increments_.size(); ++t)
      trials[t] = std::max<std::int64_t>(1, std::llround(increments_[t]));
    return trials;
  }

  std::vector<double> cumulative_expected() const {
    std::vector<double> cum(increments_.size());
    double running = 0.0;
    for (std::size_t t = 0; t < increments_.size(); ++t) cum[t] = running += increments_[t];
    return cum;
  }

  std::vector<std::int64_t> cumulative_trials() const {
    auto trials = binomial_trials();
    for (std::size_t t = 1; t < trials.size(); ++t) trials[t] += trials[t - 1];
    return trials;
  }

  LookSchedule with_alpha(double alpha) const { return LookSchedule(model_, increments_, alpha); }

  friend bool operator==(const LookSchedule& a, const LookSchedule& b) {
    if (a.model_.index() != b.model_.index()) return false;
    if (a.is_binomial() && a.exposure_proportion() != b.exposure_proportion()) return false;
    return a.increments_ == b.increments_ && a.alpha_ == b.alpha_;
  }

 private:
  SurveillanceModel model_;
  std::vector<double> increments_;
  double alpha_;
};

/// How the calibrated null draws the systematic error within one simulated trajectory.
enum class BiasDraw {
  per_replicate,  // one tau per trajectory, shared by all looks
  per_look,       // a fresh tau at every look
};

struct MonteCarloConfig {
  std::uint64_t replicates = 100000;
  std::uint64_t base_seed = 1;
  unsigned workers = 1;  // 0 = hardware concurrency
  BiasDraw bias_draw = BiasDraw::per_replicate;
};

inline constexpr std::uint64_t kMinReplicates = 1000;

struct CriticalValueResult {
  double cv = 0.0;
  double attained_alpha = 0.0;  // fraction of LLR_max strictly above cv
  std::vector<double> per_look;  // dynamic cv_t, when computed
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
};

/// Smallest realized value v (or 0) with #{values > v} <= alpha * S, and that fraction.
inline std::pair<double, double> select_critical_value(std::vector<double> values, double alpha) {
  if (values.empty()) throw DomainError("select_critical_value: no simulated values");
  const auto s = static_cast<double>(values.size());
  const auto allowed = static_cast<std::size_t>(std::floor(alpha * s * (1.0 + 1e-12)));
  double cv = 0.0;
  if (allowed < values.size()) {
    auto kth = values.begin() + static_cast<std::ptrdiff_t>(allowed);
    std::nth_element(values.begin(), kth, values.end(), std::greater<>());
    cv = std::max(0.0, *kth);
  }
  const auto above = std::count_if(values.begin(), values.end(), [cv](double v) { return v > cv; });
  return {cv, static_cast<double>(above) / s};
}

namespace detail {

inline void validate_mc(const MonteCarloConfig& mc) {
  if (mc.replicates < kMinReplicates)
    throw DomainError("Monte Carlo needs at least " + std::to_string(kMinReplicates) + " replicates");
}

/// Per-look models: broadcast a single model, or take one per look.
inline std::vector<ErrorModel> expand_models(const LookSchedule& schedule, std::span<const ErrorModel> models) {
  if (models.size() != 1 && models.size() != schedule.looks())
    throw DomainError("need 1 or " + std::to_string(schedule.looks()) + " error models, got " +
                      std::to_string(models.size()));
  for (const auto& m : models)
    if (!(m.sd >= 0.0) || !std::isfinite(m.mean)) throw DomainError("invalid error model");
  if (models.size() == 1) return std::vector<ErrorModel>(schedule.looks(), models.front());
  return {models.begin(), models.end()};
}

}  // namespace detail

/// LLR_max for each replicate under the (possibly bias-tilted) null. Replicate r draws counts
/// from stream (seed, r, 0) and bias from stream (seed, r, 1); the output is independent of
/// the worker count.
inline std::vector<double> simulate_llr_max(const LookSchedule& schedule, std::span<const ErrorModel> models,
                                            const MonteCarloConfig& mc) {
  detail::validate_mc(mc);
  const auto per_look = detail::expand_models(schedule, models);
  const std::size_t looks = schedule.looks();
  const auto& increments = schedule.expected_increments();
  std::vector<double> llr_max(mc.replicates);

  std::vector<bool> fixed(looks);
  for (std::size_t t = 0; t < looks; ++t) fixed[t] = per_look[t].sd == 0.0;

  constexpr std::size_t kBlock = 1024;
  const std::size_t blocks = (mc.replicates + kBlock - 1) / kBlock;

  if (!schedule.is_binomial()) {
    using Dist = std::poisson_distribution<std::int64_t>;
    std::vector<Dist::param_type> fixed_param(looks);
    for (std::size_t t = 0; t < looks; ++t)
      if (fixed[t]) fixed_param[t] = Dist::param_type(increments[t] * std::exp(per_look[t].mean));

    parallel_for(blocks, mc.workers, [&](std::size_t b) {
      Dist counts;
      std::normal_distribution<double> normal;
      const std::size_t end = std::min<std::size_t>(mc.replicates, (b + 1) * kBlock);
      for (std::size_t r = b * kBlock; r < end; ++r) {
        auto rng = make_stream(mc.base_seed, r, 0);
        auto bias_rng = make_stream(mc.base_seed, r, 1);
        counts.reset();
        normal.reset();
        double z = 0.0;
        if (mc.bias_draw == BiasDraw::per_replicate) z = normal(bias_rng);
        double cum_o = 0.0, cum_e = 0.0, best = 0.0;
        for (std::size_t t = 0; t < looks; ++t) {
          std::int64_t o;
          if (fixed[t]) {
            o = counts(rng, fixed_param[t]);
          } else {
            if (mc.bias_draw == BiasDraw::per_look) z = normal(bias_rng);
            const double tau = per_look[t].mean + per_look[t].sd * z;
            o = counts(rng, Dist::param_type(increments[t] * std::exp(tau)));
          }
          cum_o += static_cast<double>(o);
          cum_e += increments[t];
          if (cum_o > cum_e) best = std::max(best, cum_o * std::log(cum_o / cum_e) + cum_e - cum_o);
        }
        llr_max[r] = best;
      }
    });
    return llr_max;
  }

  using Dist = std::binomial_distribution<std::int64_t>;
  const double p = schedule.exposure_proportion();
  const auto trials = schedule.binomial_trials();
  std::vector<Dist::param_type> fixed_param(looks);
  for (std::size_t t = 0; t < looks; ++t)
    if (fixed[t]) fixed_param[t] = Dist::param_type(trials[t], tilted_proportion(p, per_look[t].mean));

  parallel_for(blocks, mc.workers, [&](std::size_t b) {
    Dist counts;
    std::normal_distribution<double> normal;
    const std::size_t end = std::min<std::size_t>(mc.replicates, (b + 1) * kBlock);
    for (std::size_t r = b * kBlock; r < end; ++r) {
      auto rng = make_stream(mc.base_seed, r, 0);
      auto bias_rng = make_stream(mc.base_seed, r, 1);
      counts.reset();
      normal.reset();
      double z = 0.0;
      if (mc.bias_draw == BiasDraw::per_replicate) z = normal(bias_rng);
      std::int64_t cum_o = 0, cum_n = 0;
      double best = 0.0;
      for (std::size_t t = 0; t < looks; ++t) {
        std::int64_t o;
        if (fixed[t]) {
          o = counts(rng, fixed_param[t]);
        } else {
          if (mc.bias_draw == BiasDraw::per_look) z = normal(bias_rng);
          const double tau = per_look[t].mean + per_look[t].sd * z;
          o = counts(rng, Dist::param_type(trials[t], tilted_proportion(p, tau)));
        }
        cum_o += o;
        cum_n += trials[t];
        best = std::max(best, binomial_llr(cum_o, cum_n, p));
      }
      llr_max[r] = best;
    }
  });
  return llr_max;
}

/// Critical value of the uncalibrated MaxSPRT for the schedule's alpha.
inline CriticalValueResult compute_cv(const LookSchedule& schedule, const MonteCarloConfig& mc) {
  const ErrorModel null_model = ErrorModel::null();
  auto values = simulate_llr_max(schedule, std::span(&null_model, 1), mc);
  const auto [cv, attained] = select_critical_value(std::move(values), schedule.alpha());
  return {cv, attained, {}, mc.replicates, mc.base_seed};
}

/// Critical value when the null counts are tilted by systematic error tau ~ N(mean, sd^2):
/// Poisson rate e_t * exp(tau), binomial exposure odds p/(1-p) * exp(tau). LLRs are still taken
/// against the untilted null. `models` holds one model, or one per look.
inline CriticalValueResult compute_calibrated_cv(const LookSchedule& schedule, std::span<const ErrorModel> models,
                                                 const MonteCarloConfig& mc) {
  auto values = simulate_llr_max(schedule, models, mc);
  const auto [cv, attained] = select_critical_value(std::move(values), schedule.alpha());
  return {cv, attained, {}, mc.replicates, mc.base_seed};
}

inline CriticalValueResult compute_calibrated_cv(const LookSchedule& schedule, const ErrorModel& model,
                                                 const MonteCarloConfig& mc) {
  return compute_calibrated_cv(schedule, std::span(&model, 1), mc);
}

/// Dynamic thresholds: cv_t is the calibrated cv with the look-t model applied to every look.
/// `cv` and `attained_alpha` describe the final look.
inline CriticalValueResult compute_dynamic_cvs(const LookSchedule& schedule, std::span<const ErrorModel> models_per_look,
                                               const MonteCarloConfig& mc) {
  if (models_per_look.size() != schedule.looks())
    throw DomainError("dynamic thresholds need one error model per look");
  CriticalValueResult out;
  out.replicates = mc.replicates;
  out.seed = mc.base_seed;
  for (const auto& model : models_per_look) {
    const auto r = compute_calibrated_cv(schedule, model, mc);
    out.per_look.push_back(r.cv);
    out.cv = r.cv;
    out.attained_alpha = r.attained_alpha;
  }
  return out;
}

/// LLR at each look from cumulative observed counts. For the binomial model the cumulative
/// trials default to the schedule's rounded increments.
inline std::vector<double> llr_sequence(const LookSchedule& schedule, std::span<const std::int64_t> cumulative_observed,
                                        std::span<const std::int64_t> cumulative_totals = {}) {
  if (cumulative_observed.size() > schedule.looks())
    throw DomainError("more observations than scheduled looks");
  if (!cumulative_totals.empty() && cumulative_totals.size() != cumulative_observed.size())
    throw DomainError("cumulative totals must match observations in length");
  std::vector<double> llr(cumulative_observed.size());
  const auto cum_e = schedule.cumulative_expected();
  const auto cum_n = schedule.cumulative_trials();
  for (std::size_t t = 0; t < cumulative_observed.size(); ++t) {
    if (cumulative_observed[t] < 0) throw DomainError("negative cumulative count");
    if (t > 0 && cumulative_observed[t] < cumulative_observed[t - 1])
      throw DomainError("cumulative counts decrease at look " + std::to_string(t + 1));
    if (schedule.is_binomial()) {
      const std::int64_t n = cumulative_totals.empty() ? cum_n[t] : cumulative_totals[t];
      if (t > 0 && !cumulative_totals.empty() && n < cumulative_totals[t - 1])
        throw DomainError("cumulative totals decrease at look " + std::to_string(t + 1));
      llr[t] = binomial_llr(cumulative_observed[t], n, schedule.exposure_proportion());
    } else {
      llr[t] = poisson_llr(static_cast<double>(cumulative_observed[t]), cum_e[t]);
    }
  }
  return llr;
}

}  // namespace calmaxsprt

#endif
