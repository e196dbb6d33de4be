#ifndef CALMAXSPRT_SIMHARNESS_HPP
#define CALMAXSPRT_SIMHARNESS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "calmaxsprt/errors.hpp"
#include "calmaxsprt/maxsprt.hpp"
#include "calmaxsprt/random.hpp"
#include "calmaxsprt/surveillance.hpp"

namespace calmaxsprt {

enum class Design { historical_comparator, sccs };

inline constexpr std::string_view design_name(Design d) {
  return d == Design::historical_comparator ? "historical-comparator" : "sccs";
}

// Baselines, back-solved so that a null outcome averages 23.1 events per 100,000 exposed
// subjects (Poisson) and 18.1 exposed events per 100 exposed cases (binomial).
inline constexpr double kHistoricalComparatorRate = 23.1 / 100000.0;
inline constexpr double kSccsExposedOutcomesPerCase = 18.1 / 100.0;
// 28-day risk window in a 273-day observation period less a 30-day pre-exposure exclusion.
inline constexpr double kSccsExposureProportion = 28.0 / 243.0;

struct EffectGroup {
  double relative_risk = 1.0;
  std::size_t count = 0;
};

struct SimulationScenario {
  std::string name;
  Design design = Design::historical_comparator;
  std::int64_t sample_size = 100000;  // exposed subjects, or exposed cases for SCCS
  std::vector<EffectGroup> effects;
  double error_mean = 0.0;  // per-outcome bias tau ~ N(error_mean, error_sd^2)
  double error_sd = 0.0;
  std::size_t looks = 10;
  std::size_t repeats = 100;
  double alpha = 0.05;
  std::uint64_t base_seed = 1;
  std::uint64_t replicates = 1000000;  // Monte Carlo replicates per critical value
  BiasDraw bias_draw = BiasDraw::per_replicate;
  ProfileForm profile_form = ProfileForm::grid;
};

struct SimulationScale {
  std::size_t repeats;
  std::uint64_t replicates;
};

inline constexpr SimulationScale kDeskScale{20, 10000};
inline constexpr SimulationScale kFullScale{100, 1000000};

inline std::vector<EffectGroup> standard_effects() { return {{1.0, 50}, {1.5, 50}, {2.0, 50}, {4.0, 50}}; }

/// 2 designs x 3 error distributions x 2 sample sizes.
inline std::vector<SimulationScenario> standard_scenarios(SimulationScale scale = kFullScale) {
  struct Err {
    double mean, sd;
    const char* label;
  };
  const Err errors[] = {{0.0, 0.0, "mu0-sd0"}, {0.0, 0.2, "mu0-sd0.2"}, {0.2, 0.2, "mu0.2-sd0.2"}};
  std::vector<SimulationScenario> out;
  for (Design design : {Design::historical_comparator, Design::sccs}) {
    for (const auto& err : errors) {
      for (bool large : {false, true}) {
        SimulationScenario s;
        s.design = design;
        s.name = std::string(design == Design::historical_comparator ? "hc" : "sccs") + (large ? "-large-" : "-small-") +
                 err.label;
        if (design == Design::historical_comparator)
          s.sample_size = large ? 1000000 : 100000;
        else
          s.sample_size = large ? 1000 : 100;
        s.effects = standard_effects();
        s.error_mean = err.mean;
        s.error_sd = err.sd;
        s.repeats = scale.repeats;
        s.replicates = scale.replicates;
        s.base_seed = 20180000 + out.size();
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

inline void validate(const SimulationScenario& s) {
  if (s.looks < 1) throw DomainError("scenario '" + s.name + "': need at least one look");
  if (s.repeats < 1) throw DomainError("scenario '" + s.name + "': need at least one repeat");
  if (s.sample_size < 1) throw DomainError("scenario '" + s.name + "': sample size must be positive");
  if (!(s.error_sd >= 0.0)) throw DomainError("scenario '" + s.name + "': error sd must be >= 0");
  bool has_null = false;
  for (const auto& e : s.effects) {
    if (!(e.relative_risk > 0.0)) throw DomainError("scenario '" + s.name + "': relative risks must be positive");
    has_null = has_null || (e.relative_risk == 1.0 && e.count > 0);
  }
  if (!has_null) throw DomainError("scenario '" + s.name + "': effect size 1 is needed for negative controls");
}

/// Null expected events over the whole study (Poisson), or total cases (SCCS).
inline double study_total(const SimulationScenario& s) {
  const auto n = static_cast<double>(s.sample_size);
  if (s.design == Design::historical_comparator) return kHistoricalComparatorRate * n;
  return std::round(kSccsExposedOutcomesPerCase * n / kSccsExposureProportion);
}

/// Cumulative case totals per look for SCCS: cases accrue uniformly.
inline std::vector<std::int64_t> sccs_cumulative_cases(const SimulationScenario& s) {
  const double total = study_total(s);
  std::vector<std::int64_t> cum(s.looks);
  for (std::size_t t = 0; t < s.looks; ++t)
    cum[t] = std::llround(total * static_cast<double>(t + 1) / static_cast<double>(s.looks));
  return cum;
}

inline LookSchedule schedule_for(const SimulationScenario& s) {
  if (s.design == Design::historical_comparator)
    return LookSchedule(PoissonModel{}, std::vector<double>(s.looks, study_total(s) / static_cast<double>(s.looks)),
                        s.alpha);
  const auto cum = sccs_cumulative_cases(s);
  std::vector<double> inc(s.looks);
  for (std::size_t t = 0; t < s.looks; ++t) inc[t] = static_cast<double>(cum[t] - (t ? cum[t - 1] : 0));
  return LookSchedule(BinomialModel{kSccsExposureProportion}, inc, s.alpha);
}

struct OutcomeSpec {
  std::size_t index = 0;
  double relative_risk = 1.0;
};

inline std::vector<OutcomeSpec> outcome_specs(const SimulationScenario& s) {
  std::vector<OutcomeSpec> out;
  for (const auto& e : s.effects)
    for (std::size_t i = 0; i < e.count; ++i) out.push_back({out.size(), e.relative_risk});
  return out;
}

struct OutcomeSeries {
  std::string outcome_id;
  double relative_risk = 1.0;
  double tau = 0.0;
  std::vector<std::int64_t> cumulative_observed;
  std::vector<std::int64_t> cumulative_total;  // SCCS only
};

inline std::string outcome_id(const OutcomeSpec& spec) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "rr%g-%03zu", spec.relative_risk, spec.index);
  return buf;
}

/// Cumulative counts of one outcome in one repeat. The bias tau is drawn once and held over looks.
inline OutcomeSeries generate_outcome_data(const SimulationScenario& s, const OutcomeSpec& spec, std::size_t repeat) {
  const std::uint64_t repeat_seed = derive_seed(s.base_seed, repeat, 11);
  auto bias_rng = make_stream(repeat_seed, spec.index, 1);
  auto rng = make_stream(repeat_seed, spec.index, 0);
  OutcomeSeries out;
  out.outcome_id = outcome_id(spec);
  out.relative_risk = spec.relative_risk;
  out.tau = s.error_mean;
  if (s.error_sd > 0.0) out.tau += s.error_sd * std::normal_distribution<double>()(bias_rng);
  const double log_effect = std::log(spec.relative_risk) + out.tau;

  std::int64_t cum = 0;
  if (s.design == Design::historical_comparator) {
    const double per_look = study_total(s) / static_cast<double>(s.looks) * std::exp(log_effect);
    std::poisson_distribution<std::int64_t> d(per_look);
    for (std::size_t t = 0; t < s.looks; ++t) out.cumulative_observed.push_back(cum += d(rng));
    return out;
  }
  out.cumulative_total = sccs_cumulative_cases(s);
  const double q = tilted_proportion(kSccsExposureProportion, log_effect);
  for (std::size_t t = 0; t < s.looks; ++t) {
    const std::int64_t cases = out.cumulative_total[t] - (t ? out.cumulative_total[t - 1] : 0);
    cum += std::binomial_distribution<std::int64_t>(cases, q)(rng);
    out.cumulative_observed.push_back(cum);
  }
  return out;
}

/// Error rates of one repeat. type2[j] belongs to the j-th positive effect size.
struct RepeatRates {
  std::size_t repeat = 0;
  std::array<double, kModeCount> type1{};
  std::vector<std::array<double, kModeCount>> type2;
};

struct ErrorRateReport {
  std::string scenario;
  std::vector<double> positive_effects;
  std::vector<RepeatRates> repeats;
  std::uint64_t replicates = 0;
};

inline std::uint64_t repeat_mc_seed(const SimulationScenario& s, std::size_t repeat) {
  return derive_seed(s.base_seed, repeat, 12);
}

/// One repeat: all outcomes through all looks in the four modes. The error model is fitted on
/// the effect-size-1 outcomes at each look and applied to every outcome.
inline RepeatRates run_repeat(const SimulationScenario& s, std::size_t repeat) {
  const auto specs = outcome_specs(s);
  const auto schedule = schedule_for(s);
  std::vector<OutcomeSeries> series;
  series.reserve(specs.size());
  std::set<std::string> controls;
  for (const auto& spec : specs) {
    series.push_back(generate_outcome_data(s, spec, repeat));
    if (spec.relative_risk == 1.0) controls.insert(series.back().outcome_id);
  }

  MonteCarloConfig mc;
  mc.replicates = s.replicates;
  mc.base_seed = repeat_mc_seed(s, repeat);
  mc.bias_draw = s.bias_draw;
  SurveillanceOptions options;
  options.leave_one_out = false;
  options.profile_form = s.profile_form;
  SurveillanceRunner runner(schedule, controls, mc, options);
  for (std::size_t t = 0; t < s.looks; ++t) {
    LookObservation look{t + 1, {}};
    look.outcomes.reserve(series.size());
    for (const auto& o : series)
      look.outcomes.push_back({o.outcome_id, o.cumulative_observed[t], o.cumulative_total.empty() ? -1 : o.cumulative_total[t]});
    runner.process(look);
  }

  std::vector<double> positive;
  for (const auto& e : s.effects)
    if (e.relative_risk != 1.0 && e.count > 0) positive.push_back(e.relative_risk);

  // Outcomes never informative are left out of both numerators and denominators.
  std::array<std::size_t, kModeCount> null_signals{};
  std::size_t null_n = 0;
  std::vector<std::array<std::size_t, kModeCount>> pos_signals(positive.size());
  std::vector<std::size_t> pos_n(positive.size());
  const auto& outcomes = runner.result().outcomes;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].first_informative_look) continue;
    const double rr = series[i].relative_risk;
    std::size_t* n;
    std::array<std::size_t, kModeCount>* signals;
    if (rr == 1.0) {
      n = &null_n;
      signals = &null_signals;
    } else {
      const auto j = static_cast<std::size_t>(std::find(positive.begin(), positive.end(), rr) - positive.begin());
      n = &pos_n[j];
      signals = &pos_signals[j];
    }
    ++*n;
    for (std::size_t k = 0; k < kModeCount; ++k) (*signals)[k] += outcomes[i].first_signal_look[k].has_value();
  }

  RepeatRates rates;
  rates.repeat = repeat;
  const auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : kMissing; };
  for (std::size_t k = 0; k < kModeCount; ++k) rates.type1[k] = frac(null_signals[k], null_n);
  for (std::size_t j = 0; j < positive.size(); ++j) {
    std::array<double, kModeCount> t2{};
    for (std::size_t k = 0; k < kModeCount; ++k) t2[k] = pos_n[j] ? 1.0 - frac(pos_signals[j][k], pos_n[j]) : kMissing;
    rates.type2.push_back(t2);
  }
  return rates;
}

inline ErrorRateReport run_scenario(const SimulationScenario& s, unsigned workers = 1) {
  validate(s);
  ErrorRateReport report;
  report.scenario = s.name;
  report.replicates = s.replicates;
  for (const auto& e : s.effects)
    if (e.relative_risk != 1.0 && e.count > 0) report.positive_effects.push_back(e.relative_risk);
  report.repeats.resize(s.repeats);
  try {
    parallel_for(s.repeats, workers, [&](std::size_t r) { report.repeats[r] = run_repeat(s, r); });
  } catch (const std::exception& e) {
    throw std::runtime_error("scenario '" + s.name + "': " + e.what());
  }
  return report;
}

/// Mean over repeats, skipping repeats where the rate is undefined.
inline double mean_type1(const ErrorRateReport& report, Mode mode) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.repeats) {
    const double v = r.type1[static_cast<std::size_t>(mode)];
    if (!std::isnan(v)) sum += v, ++n;
  }
  return n ? sum / static_cast<double>(n) : kMissing;
}

inline double mean_type2(const ErrorRateReport& report, Mode mode, double relative_risk) {
  const auto it = std::find(report.positive_effects.begin(), report.positive_effects.end(), relative_risk);
  if (it == report.positive_effects.end()) throw DomainError("no such effect size in report");
  const auto j = static_cast<std::size_t>(it - report.positive_effects.begin());
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.repeats) {
    const double v = r.type2[j][static_cast<std::size_t>(mode)];
    if (!std::isnan(v)) sum += v, ++n;
  }
  return n ? sum / static_cast<double>(n) : kMissing;
}

struct TidyRow {
  std::string scenario;
  std::size_t repeat;
  Mode mode;
  double effect_size;
  std::string rate_type;  // "type1" or "type2"
  double value;
};

/// One row per repeat x mode x effect size.
inline std::vector<TidyRow> tidy_rows(const ErrorRateReport& report) {
  std::vector<TidyRow> rows;
  for (const auto& r : report.repeats) {
    for (Mode m : kAllModes) {
      const auto k = static_cast<std::size_t>(m);
      rows.push_back({report.scenario, r.repeat, m, 1.0, "type1", r.type1[k]});
      for (std::size_t j = 0; j < report.positive_effects.size(); ++j)
        rows.push_back({report.scenario, r.repeat, m, report.positive_effects[j], "type2", r.type2[j][k]});
    }
  }
  return rows;
}

/// Mean null events per outcome at the final look (exposed events for SCCS), with no effect
/// and no bias, averaged over `repeats` repeats of `outcomes` outcomes.
inline double mean_null_events(Design design, std::int64_t sample_size, std::size_t repeats, std::size_t outcomes = 50,
                               std::uint64_t seed = 1) {
  SimulationScenario s;
  s.design = design;
  s.sample_size = sample_size;
  s.effects = {{1.0, outcomes}};
  s.base_seed = seed;
  double sum = 0.0;
  for (std::size_t r = 0; r < repeats; ++r)
    for (const auto& spec : outcome_specs(s))
      sum += static_cast<double>(generate_outcome_data(s, spec, r).cumulative_observed.back());
  return sum / static_cast<double>(repeats * outcomes);
}

// ---------------------------------------------------------------------------------------------
// Confounding by an unmeasured variable Z: P(X) and P(Y) both rise with Z, X has no effect on Y.
// ---------------------------------------------------------------------------------------------

struct ConfoundingConfig {
  double x_intercept = 0.3;
  double x_slope = 0.1;
  double y_intercept = 0.03;
  double y_slope = 0.01;
  std::size_t repeats = 10;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

struct ConfoundingPoint {
  std::int64_t sample_size = 0;
  double relative_risk = 1.0;  // pooled over repeats on the log scale
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double se_log = 0.0;
};

inline ConfoundingPoint confounding_point(std::int64_t n, std::size_t size_index, const ConfoundingConfig& cfg) {
  if (n < 1000) throw DomainError("confounding demo needs sample sizes >= 1000");
  std::vector<double> log_rr(cfg.repeats), var(cfg.repeats);
  parallel_for(cfg.repeats, cfg.workers, [&](std::size_t r) {
    auto rng = make_stream(derive_seed(cfg.seed, size_index, 21), r);
    std::normal_distribution<double> z_dist;
    std::uniform_real_distribution<double> u;
    double exposed = 0, exposed_cases = 0, unexposed = 0, unexposed_cases = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double z = z_dist(rng);
      const bool x = u(rng) < std::clamp(cfg.x_intercept + cfg.x_slope * z, 0.0, 1.0);
      const bool y = u(rng) < std::clamp(cfg.y_intercept + cfg.y_slope * z, 0.0, 1.0);
      if (x) {
        ++exposed;
        exposed_cases += y;
      } else {
        ++unexposed;
        unexposed_cases += y;
      }
    }
    if (exposed_cases == 0 || unexposed_cases == 0)
      throw DomainError("confounding demo: no outcomes in one arm; increase the sample size");
    log_rr[r] = std::log((exposed_cases / exposed) / (unexposed_cases / unexposed));
    var[r] = 1.0 / exposed_cases - 1.0 / exposed + 1.0 / unexposed_cases - 1.0 / unexposed;
  });
  double w_sum = 0.0, wx = 0.0;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    w_sum += 1.0 / var[r];
    wx += log_rr[r] / var[r];
  }
  const double est = wx / w_sum, se = std::sqrt(1.0 / w_sum);
  constexpr double z975 = 1.959963984540054;
  return {n, std::exp(est), std::exp(est - z975 * se), std::exp(est + z975 * se), se};
}

inline std::vector<ConfoundingPoint> confounding_demo(std::span<const std::int64_t> sample_sizes,
                                                      const ConfoundingConfig& cfg = {}) {
  if (cfg.repeats < 1) throw DomainError("confounding demo needs at least one repeat");
  std::vector<ConfoundingPoint> out;
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) out.push_back(confounding_point(sample_sizes[i], i, cfg));
  return out;
}

}  // namespace calmaxsprt

#endif
