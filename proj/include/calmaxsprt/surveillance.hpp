#ifndef CALMAXSPRT_SURVEILLANCE_HPP
#define CALMAXSPRT_SURVEILLANCE_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "calmaxsprt/calibration.hpp"
#include "calmaxsprt/error_model.hpp"
#include "calmaxsprt/errors.hpp"
#include "calmaxsprt/likelihood.hpp"
#include "calmaxsprt/maxsprt.hpp"

namespace calmaxsprt {

/// {uncalibrated, calibrated} x {per-look p-value, MaxSPRT}.
enum class Mode : std::size_t {
  uncalibrated_per_look_p = 0,
  uncalibrated_maxsprt = 1,
  calibrated_per_look_p = 2,
  calibrated_maxsprt = 3,
};

inline constexpr std::size_t kModeCount = 4;
inline constexpr std::array<Mode, kModeCount> kAllModes{Mode::uncalibrated_per_look_p, Mode::uncalibrated_maxsprt,
                                                        Mode::calibrated_per_look_p, Mode::calibrated_maxsprt};

inline constexpr std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::uncalibrated_per_look_p: return "uncalibrated-per-look-p";
    case Mode::uncalibrated_maxsprt: return "uncalibrated-maxsprt";
    case Mode::calibrated_per_look_p: return "calibrated-per-look-p";
    case Mode::calibrated_maxsprt: return "calibrated-maxsprt";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view name) {
  for (Mode m : kAllModes)
    if (mode_name(m) == name) return m;
  return std::nullopt;
}

inline constexpr bool is_calibrated(Mode m) {
  return m == Mode::calibrated_per_look_p || m == Mode::calibrated_maxsprt;
}
inline constexpr bool is_maxsprt(Mode m) { return m == Mode::uncalibrated_maxsprt || m == Mode::calibrated_maxsprt; }

struct ModeSet {
  std::array<bool, kModeCount> enabled{true, true, true, true};

  static ModeSet none() { return ModeSet{{false, false, false, false}}; }
  ModeSet& add(Mode m) {
    enabled[static_cast<std::size_t>(m)] = true;
    return *this;
  }
  bool contains(Mode m) const { return enabled[static_cast<std::size_t>(m)]; }
  bool any_calibrated() const {
    return contains(Mode::calibrated_per_look_p) || contains(Mode::calibrated_maxsprt);
  }
};

/// When critical values are computed. `on_demand` skips them for outcomes whose LLR is 0 or
/// whose mode has already signalled; signals are the same either way.
enum class CvPolicy { always, on_demand };

enum class ProfileForm { normal_approx, grid };

struct SurveillanceOptions {
  ModeSet modes;
  CvPolicy cv_policy = CvPolicy::on_demand;
  ProfileForm profile_form = ProfileForm::grid;
  GridSpec grid;
  FitOptions fit;
  bool leave_one_out = true;  // score each negative control with a model fitted on the others
  std::optional<ErrorModel> fixed_model;  // use this model at every look instead of fitting
  unsigned workers = 1;
};

struct OutcomeCounts {
  std::string outcome_id;
  std::int64_t cumulative_observed = 0;
  std::int64_t cumulative_total = -1;  // binomial cases; -1 takes the schedule's cumulative trials
};

struct LookObservation {
  std::size_t look_index = 0;  // 1-based
  std::vector<OutcomeCounts> outcomes;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Per-outcome statistics at one look. Uninformative looks leave the numeric fields NaN.
struct LookStatistics {
  std::size_t look = 0;
  std::int64_t cumulative_observed = 0;
  std::int64_t cumulative_total = 0;  // binomial only
  bool informative = false;
  double beta_hat = kMissing;
  double se = kMissing;
  double llr = kMissing;
  double p_uncalibrated = kMissing;
  double p_calibrated = kMissing;
  double cv = kMissing;             // uncalibrated MaxSPRT threshold, when computed
  double cv_calibrated = kMissing;  // dynamic calibrated threshold, when computed
  std::optional<ErrorModel> model;  // model used for the calibrated modes
  bool model_fallback = false;      // model carried over from an earlier look
  std::array<bool, kModeCount> signaled{};  // signalled at or before this look
};

struct OutcomeSummary {
  std::string outcome_id;
  bool negative_control = false;
  std::vector<LookStatistics> looks;
  std::optional<std::size_t> first_informative_look;
  std::array<std::optional<std::size_t>, kModeCount> first_signal_look{};
};

/// Model fitted on all informative negative controls at a look.
struct LookModel {
  std::size_t look = 0;
  std::optional<ErrorModel> model;
  bool fallback = false;
  std::size_t informative_controls = 0;
};

struct SurveillanceResult {
  std::vector<OutcomeSummary> outcomes;
  std::vector<LookModel> look_models;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
};

/// Processes looks one at a time. Output for look t depends only on looks 1..t.
class SurveillanceRunner {
 public:
  SurveillanceRunner(LookSchedule schedule, std::set<std::string> negative_control_ids, MonteCarloConfig mc,
                     SurveillanceOptions options = {})
      : schedule_(std::move(schedule)),
        controls_(std::move(negative_control_ids)),
        mc_(mc),
        options_(options) {
    detail::validate_mc(mc_);
    if (options_.modes.any_calibrated() && controls_.empty() && !options_.fixed_model)
      throw ConfigurationError("calibrated modes need negative controls");
  }

  const LookSchedule& schedule() const noexcept { return schedule_; }
  const SurveillanceResult& result() const noexcept { return result_; }
  std::size_t looks_processed() const noexcept { return result_.look_models.size(); }

  /// Adds one look; returns the statistics of every outcome at that look, in first-look order.
  std::vector<LookStatistics> process(const LookObservation& observation) {
    const std::size_t t = looks_processed();
    if (t >= schedule_.looks()) throw ProtocolError("schedule has only " + std::to_string(schedule_.looks()) + " looks");
    if (observation.look_index != t + 1)
      throw ProtocolError("expected look " + std::to_string(t + 1) + ", got look " +
                          std::to_string(observation.look_index));
    if (t == 0) register_outcomes(observation);
    const auto rows = align(observation);

    const auto cum_e = schedule_.cumulative_expected();
    const auto cum_n = schedule_.cumulative_trials();
    std::vector<LookStatistics> stats(rows.size());
    std::vector<std::optional<LikelihoodProfile>> profiles(rows.size());

    for (std::size_t i = 0; i < rows.size(); ++i) {
      const OutcomeCounts& row = *rows[i];
      auto& s = stats[i];
      s.look = t + 1;
      s.cumulative_observed = row.cumulative_observed;
      const auto& history = result_.outcomes[i].looks;
      if (!history.empty() && row.cumulative_observed < history.back().cumulative_observed)
        throw ProtocolError("outcome '" + row.outcome_id + "': cumulative count decreases at look " +
                            std::to_string(t + 1));
      CountData data;
      if (schedule_.is_binomial()) {
        s.cumulative_total = row.cumulative_total < 0 ? cum_n[t] : row.cumulative_total;
        if (!history.empty() && s.cumulative_total < history.back().cumulative_total)
          throw ProtocolError("outcome '" + row.outcome_id + "': cumulative total decreases at look " +
                              std::to_string(t + 1));
        data = BinomialCounts{row.cumulative_observed, s.cumulative_total, schedule_.exposure_proportion()};
      } else {
        data = PoissonCounts{row.cumulative_observed, cum_e[t]};
      }
      try {
        validate(data);
      } catch (const DomainError& e) {
        throw ProtocolError("outcome '" + row.outcome_id + "': " + e.what());
      }
      if (!informative(data)) continue;
      try {
        if (options_.profile_form == ProfileForm::grid) {
          profiles[i] = profile_from_counts(row.outcome_id, data, options_.grid);
        } else {
          const auto est = normal_approx_from_counts(data);
          profiles[i] = LikelihoodProfile::normal(row.outcome_id, est.point_estimate, est.standard_error);
        }
        const auto est = mle_and_se(*profiles[i]);
        s.beta_hat = est.point_estimate;
        s.se = est.standard_error;
      } catch (const UninformativeProfile&) {
        profiles[i].reset();
        continue;
      } catch (const CurvatureError&) {
        profiles[i].reset();
        continue;
      }
      s.informative = true;
      s.llr = count_llr(data);
      s.p_uncalibrated = uncalibrated_p(s.beta_hat, s.se);
    }

    LookModel look_model{t + 1, std::nullopt, false, 0};
    if (options_.modes.any_calibrated()) assign_models(stats, profiles, look_model);

    for (std::size_t i = 0; i < rows.size(); ++i) score(result_.outcomes[i], stats[i]);

    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& summary = result_.outcomes[i];
      if (stats[i].informative && !summary.first_informative_look) summary.first_informative_look = t + 1;
      summary.looks.push_back(stats[i]);
    }
    result_.look_models.push_back(look_model);
    result_.replicates = mc_.replicates;
    result_.seed = mc_.base_seed;
    return stats;
  }

 private:
  void register_outcomes(const LookObservation& observation) {
    result_.outcomes.clear();
    index_.clear();
    std::set<std::string> seen;
    for (const auto& row : observation.outcomes) {
      if (!seen.insert(row.outcome_id).second)
        throw ProtocolError("outcome '" + row.outcome_id + "' appears twice in look 1");
      OutcomeSummary summary;
      summary.outcome_id = row.outcome_id;
      summary.negative_control = controls_.contains(row.outcome_id);
      index_.emplace(row.outcome_id, result_.outcomes.size());
      result_.outcomes.push_back(std::move(summary));
    }
    std::vector<std::string> missing;
    for (const auto& id : controls_)
      if (!seen.contains(id)) missing.push_back(id);
    if (!missing.empty()) {
      std::string list;
      for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
      throw ConfigurationError("negative controls without observations: " + list);
    }
    loo_last_.assign(result_.outcomes.size(), std::nullopt);
  }

  /// Rows of this look in the outcome order fixed at look 1.
  std::vector<const OutcomeCounts*> align(const LookObservation& observation) const {
    std::vector<const OutcomeCounts*> rows(result_.outcomes.size(), nullptr);
    for (const auto& row : observation.outcomes) {
      const auto it = index_.find(row.outcome_id);
      if (it == index_.end())
        throw ProtocolError("look " + std::to_string(observation.look_index) + ": unknown outcome '" +
                            row.outcome_id + "'");
      if (rows[it->second] != nullptr)
        throw ProtocolError("look " + std::to_string(observation.look_index) + ": outcome '" + row.outcome_id +
                            "' appears twice");
      rows[it->second] = &row;
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i] == nullptr)
        throw ProtocolError("look " + std::to_string(observation.look_index) + ": outcome '" +
                            result_.outcomes[i].outcome_id + "' missing");
    return rows;
  }

  void assign_models(std::vector<LookStatistics>& stats, const std::vector<std::optional<LikelihoodProfile>>& profiles,
                     LookModel& look_model) {
    std::vector<LikelihoodProfile> control_profiles;
    std::vector<std::size_t> control_rows;
    for (std::size_t i = 0; i < stats.size(); ++i) {
      if (result_.outcomes[i].negative_control && profiles[i]) {
        control_profiles.push_back(*profiles[i]);
        control_rows.push_back(i);
      }
    }
    look_model.informative_controls = control_profiles.size();
    if (options_.fixed_model) {
      look_model.model = options_.fixed_model;
      for (auto& s : stats) {
        if (!s.informative) continue;
        s.model = options_.fixed_model;
        s.p_calibrated = calibrated_p(s.beta_hat, s.se, *s.model);
      }
      return;
    }
    try {
      look_model.model = fit_error_model(control_profiles, options_.fit);
      last_model_ = look_model.model;
    } catch (const InsufficientControls&) {
    } catch (const FitError&) {
    }
    if (!look_model.model && last_model_) {
      look_model.model = last_model_;
      look_model.fallback = true;
    }

    std::vector<std::optional<ErrorModel>> loo(stats.size());
    if (options_.leave_one_out && control_profiles.size() >= 3) {
      const auto fits = leave_one_out_models(control_profiles, options_.fit, options_.workers);
      for (std::size_t j = 0; j < fits.size(); ++j) loo[control_rows[j]] = fits[j].model;
    }

    for (std::size_t i = 0; i < stats.size(); ++i) {
      auto& s = stats[i];
      if (!s.informative) continue;
      if (options_.leave_one_out && result_.outcomes[i].negative_control) {
        if (loo[i]) {
          s.model = loo[i];
          loo_last_[i] = loo[i];
        } else if (loo_last_[i]) {
          s.model = loo_last_[i];
          s.model_fallback = true;
        }
      } else {
        s.model = look_model.model;
        s.model_fallback = look_model.fallback;
      }
      if (s.model) s.p_calibrated = calibrated_p(s.beta_hat, s.se, *s.model);
    }
  }

  double uncalibrated_cv() {
    if (!cv_) cv_ = compute_cv(schedule_, mc_).cv;
    return *cv_;
  }

  double calibrated_cv(const ErrorModel& model) {
    const std::pair key{model.mean, model.sd};
    const auto it = calibrated_cvs_.find(key);
    if (it != calibrated_cvs_.end()) return it->second;
    const ErrorModel bare{model.mean, model.sd};
    const double cv = compute_calibrated_cv(schedule_, bare, mc_).cv;
    calibrated_cvs_.emplace(key, cv);
    return cv;
  }

  void score(OutcomeSummary& summary, LookStatistics& s) {
    if (!summary.looks.empty()) s.signaled = summary.looks.back().signaled;
    if (!s.informative) return;
    const double alpha = schedule_.alpha();
    const bool always = options_.cv_policy == CvPolicy::always;
    const auto pending = [&](Mode m) { return options_.modes.contains(m) && !s.signaled[static_cast<std::size_t>(m)]; };

    if (options_.modes.contains(Mode::uncalibrated_maxsprt) && (always || (pending(Mode::uncalibrated_maxsprt) && s.llr > 0.0)))
      s.cv = uncalibrated_cv();
    if (s.model && options_.modes.contains(Mode::calibrated_maxsprt) &&
        (always || (pending(Mode::calibrated_maxsprt) && s.llr > 0.0)))
      s.cv_calibrated = calibrated_cv(*s.model);

    std::array<bool, kModeCount> now{};
    now[static_cast<std::size_t>(Mode::uncalibrated_per_look_p)] = s.p_uncalibrated < alpha;
    now[static_cast<std::size_t>(Mode::uncalibrated_maxsprt)] = !std::isnan(s.cv) && s.llr > s.cv;
    now[static_cast<std::size_t>(Mode::calibrated_per_look_p)] = !std::isnan(s.p_calibrated) && s.p_calibrated < alpha;
    now[static_cast<std::size_t>(Mode::calibrated_maxsprt)] = !std::isnan(s.cv_calibrated) && s.llr > s.cv_calibrated;
    for (Mode m : kAllModes) {
      const auto k = static_cast<std::size_t>(m);
      if (options_.modes.contains(m) && now[k] && !s.signaled[k]) {
        s.signaled[k] = true;
        summary.first_signal_look[k] = s.look;
      }
    }
  }

  LookSchedule schedule_;
  std::set<std::string> controls_;
  MonteCarloConfig mc_;
  SurveillanceOptions options_;
  SurveillanceResult result_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<ErrorModel> last_model_;
  std::vector<std::optional<ErrorModel>> loo_last_;
  std::optional<double> cv_;
  std::map<std::pair<double, double>, double> calibrated_cvs_;
};

inline SurveillanceResult run_surveillance(const LookSchedule& schedule, std::span<const LookObservation> looks,
                                           const std::set<std::string>& negative_control_ids,
                                           const MonteCarloConfig& mc, const SurveillanceOptions& options = {}) {
  SurveillanceRunner runner(schedule, negative_control_ids, mc, options);
  for (const auto& look : looks) runner.process(look);
  return runner.result();
}

/// Fraction of negative controls that ever signalled, per mode. Controls that were never
/// informative are left out of the denominator.
struct Type1Report {
  std::array<double, kModeCount> rate{kMissing, kMissing, kMissing, kMissing};
  std::array<std::size_t, kModeCount> signals{};
  std::size_t denominator = 0;
};

inline Type1Report type1_report(const SurveillanceResult& result) {
  Type1Report report;
  for (const auto& o : result.outcomes) {
    if (!o.negative_control || !o.first_informative_look) continue;
    ++report.denominator;
    for (std::size_t k = 0; k < kModeCount; ++k)
      if (o.first_signal_look[k]) ++report.signals[k];
  }
  if (report.denominator > 0)
    for (std::size_t k = 0; k < kModeCount; ++k)
      report.rate[k] = static_cast<double>(report.signals[k]) / static_cast<double>(report.denominator);
  return report;
}

}  // namespace calmaxsprt

#endif
