#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "calmaxsprt/calibration.hpp"
#include "calmaxsprt/error_model.hpp"
#include "calmaxsprt/io.hpp"
#include "calmaxsprt/maxsprt.hpp"
#include "calmaxsprt/simharness.hpp"
#include "calmaxsprt/surveillance.hpp"

using namespace calmaxsprt;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

io::Table load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return io::read_table(in);
  } catch (const ParseError& e) {
    throw InputError(path + ": " + e.what());
  }
}

template <typename F>
auto parse_file(const std::string& path, F&& parse) {
  auto table = load(path);
  try {
    return parse(table);
  } catch (const ParseError& e) {
    throw InputError(path + ": " + e.what());
  }
}

struct Output {
  std::string path;
  std::string format = "tsv";

  void write(const std::string& text) const {
    if (path.empty() || path == "-") {
      std::cout << text;
      return;
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
  }
  bool tsv() const { return format == "tsv"; }
};

void add_output(CLI::App* cmd, Output& out) {
  cmd->add_option("-o,--output", out.path, "Write results to this file instead of stdout");
  cmd->add_option("--format", out.format, "Output format")->check(CLI::IsMember({"text", "tsv"}))->capture_default_str();
}

struct McFlags {
  std::uint64_t replicates = 100000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string bias_draw = "per-replicate";

  MonteCarloConfig config() const {
    MonteCarloConfig mc;
    mc.replicates = replicates;
    mc.base_seed = seed;
    mc.workers = threads;
    mc.bias_draw = bias_draw == "per-look" ? BiasDraw::per_look : BiasDraw::per_replicate;
    return mc;
  }
};

void add_mc(CLI::App* cmd, McFlags& f) {
  cmd->add_option("-S,--replicates", f.replicates, "Monte Carlo replicates")->check(CLI::Range(1000ULL, 1ULL << 40))->capture_default_str();
  cmd->add_option("--seed", f.seed, "Base random seed")->capture_default_str();
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)")->capture_default_str();
  cmd->add_option("--bias-draw", f.bias_draw, "Systematic error draw in calibrated Monte Carlo")
      ->check(CLI::IsMember({"per-replicate", "per-look"}))
      ->capture_default_str();
}

void warn_small(std::uint64_t replicates) {
  if (replicates < 100000) std::cerr << "warning: " << replicates << " replicates; critical values are noisy below 100000\n";
}

std::string text_error_model(const ErrorModel& m) {
  std::ostringstream out;
  out << "mean        " << io::format_double(m.mean) << "\nsd          " << io::format_double(m.sd)
      << "\nn_controls  " << m.n_controls << "\nn_dropped   " << m.n_dropped << "\nconverged   "
      << (m.converged ? "yes" : "no") << '\n';
  return out.str();
}

std::string text_cv(const CriticalValueResult& r) {
  std::ostringstream out;
  out << "cv              " << io::format_double(r.cv) << "\nattained_alpha  " << io::format_double(r.attained_alpha)
      << "\nreplicates      " << r.replicates << "\nseed            " << r.seed << '\n';
  return out.str();
}

std::string text_run(const SurveillanceResult& r, const Type1Report& rep) {
  std::ostringstream out;
  out << "replicates " << r.replicates << ", seed " << r.seed << "\n\nfirst signal look per mode\n";
  out << "outcome";
  for (Mode m : kAllModes) out << '\t' << mode_name(m);
  out << '\n';
  for (const auto& o : r.outcomes) {
    out << o.outcome_id << (o.negative_control ? " (control)" : "");
    for (const auto& f : o.first_signal_look) out << '\t' << (f ? std::to_string(*f) : "-");
    out << '\n';
  }
  out << "\ntype 1 error over " << rep.denominator << " negative controls\n";
  for (Mode m : kAllModes) {
    const auto k = static_cast<std::size_t>(m);
    out << mode_name(m) << '\t' << rep.signals[k] << '\t' << io::format_double(rep.rate[k]) << '\n';
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential safety surveillance with MaxSPRT and empirical calibration"};
  app.require_subcommand(1);

  // fit-null
  std::string estimates_path, grid_path;
  Output fit_out;
  auto* fit = app.add_subcommand("fit-null", "Fit the systematic-error distribution to negative-control estimates");
  auto* est_opt = fit->add_option("--estimates", estimates_path, "outcome_id, log_rr, se_log_rr");
  auto* grid_opt = fit->add_option("--grid-profiles", grid_path, "outcome_id, log_rr_grid_point, log_likelihood");
  est_opt->excludes(grid_opt);
  add_output(fit, fit_out);

  // compute-cv
  std::string schedule_path, model_path;
  McFlags cv_mc;
  Output cv_out;
  auto* cv = app.add_subcommand("compute-cv", "MaxSPRT critical value by Monte Carlo");
  cv->add_option("--schedule", schedule_path, "model, t, e_t, p, alpha")->required();
  cv->add_option("--error-model", model_path, "Calibrate against this error model");
  add_mc(cv, cv_mc);
  add_output(cv, cv_out);

  // run
  std::string run_schedule, looks_path, controls_path, run_model, profile = "grid", cv_policy = "on-demand";
  std::vector<std::string> modes;
  bool no_loo = false;
  McFlags run_mc;
  Output run_out;
  auto* run = app.add_subcommand("run", "Sequential surveillance over a looks file");
  run->add_option("--schedule", run_schedule, "model, t, e_t, p, alpha")->required();
  run->add_option("--looks", looks_path, "outcome_id, look, cumulative_observed[, cumulative_total]")->required();
  run->add_option("--controls", controls_path, "outcome_id of each negative control");
  run->add_option("--error-model", run_model, "Use this error model at every look instead of fitting");
  run->add_option("--modes", modes, "Subset of modes to evaluate")
      ->check(CLI::IsMember({"uncalibrated-per-look-p", "uncalibrated-maxsprt", "calibrated-per-look-p",
                             "calibrated-maxsprt"}));
  run->add_option("--profile", profile, "Likelihood profile form")->check(CLI::IsMember({"grid", "normal"}))->capture_default_str();
  run->add_option("--cv-policy", cv_policy, "When to compute critical values")
      ->check(CLI::IsMember({"always", "on-demand"}))
      ->capture_default_str();
  run->add_flag("--no-leave-one-out", no_loo, "Score negative controls with the model fitted on all controls");
  add_mc(run, run_mc);
  add_output(run, run_out);

  // simulate
  std::string scenario = "all";
  bool list = false, full = false;
  std::size_t repeats = 0;
  std::uint64_t sim_replicates = 0;
  unsigned sim_threads = 1;
  std::string sim_bias = "per-replicate", sim_profile = "grid";
  Output sim_out;
  auto* sim = app.add_subcommand("simulate", "Type 1 and 2 error rates in the synthetic scenarios");
  sim->add_flag("--list", list, "List scenario names and exit");
  sim->add_option("--scenario", scenario, "Scenario name or 'all'")->capture_default_str();
  sim->add_flag("--full", full, "100 repeats and 1e6 replicates instead of 20 and 1e4");
  sim->add_option("--repeats", repeats, "Override the number of repeats");
  sim->add_option("-S,--replicates", sim_replicates, "Override Monte Carlo replicates")->check(CLI::Range(1000ULL, 1ULL << 40));
  sim->add_option("--threads", sim_threads, "Worker threads over repeats (0 = all cores)")->capture_default_str();
  sim->add_option("--bias-draw", sim_bias, "Systematic error draw in calibrated Monte Carlo")
      ->check(CLI::IsMember({"per-replicate", "per-look"}))
      ->capture_default_str();
  sim->add_option("--profile", sim_profile, "Likelihood profile form")->check(CLI::IsMember({"grid", "normal"}))->capture_default_str();
  add_output(sim, sim_out);

  // confounding
  std::vector<std::int64_t> sizes{10000, 100000, 1000000};
  ConfoundingConfig conf;
  bool no_confounding = false;
  Output conf_out;
  auto* confounding = app.add_subcommand("confounding", "Relative risk under an unmeasured confounder with no causal effect");
  confounding->add_option("--sizes", sizes, "Sample sizes")->delimiter(',')->check(CLI::Range(int64_t{1000}, int64_t{1} << 40));
  confounding->add_option("--repeats", conf.repeats, "Repeats pooled per sample size")->check(CLI::PositiveNumber)->capture_default_str();
  confounding->add_option("--seed", conf.seed, "Random seed")->capture_default_str();
  confounding->add_option("--threads", conf.workers, "Worker threads (0 = all cores)")->capture_default_str();
  confounding->add_flag("--no-confounding", no_confounding, "Set the confounder coefficients to zero");
  add_output(confounding, conf_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (fit->parsed()) {
      if (estimates_path.empty() && grid_path.empty()) throw InputError("fit-null needs --estimates or --grid-profiles");
      const auto profiles = estimates_path.empty() ? parse_file(grid_path, io::parse_grid_profiles)
                                                   : parse_file(estimates_path, io::parse_estimates);
      const auto model = fit_error_model(profiles);
      if (!model.converged) std::cerr << "warning: optimizer did not converge\n";
      fit_out.write(fit_out.tsv() ? io::format_error_model(model) : text_error_model(model));
    } else if (cv->parsed()) {
      const auto schedule = parse_file(schedule_path, io::parse_schedule);
      warn_small(cv_mc.replicates);
      CriticalValueResult r;
      if (model_path.empty()) {
        r = compute_cv(schedule, cv_mc.config());
      } else {
        const auto model = parse_file(model_path, io::parse_error_model);
        r = compute_calibrated_cv(schedule, ErrorModel{model.mean, model.sd}, cv_mc.config());
      }
      cv_out.write(cv_out.tsv() ? io::format_cv(r) : text_cv(r));
    } else if (run->parsed()) {
      const auto schedule = parse_file(run_schedule, io::parse_schedule);
      const auto looks = parse_file(looks_path, io::parse_looks);
      std::set<std::string> controls;
      if (!controls_path.empty()) controls = parse_file(controls_path, io::parse_controls);
      SurveillanceOptions opt;
      if (!modes.empty()) {
        opt.modes = ModeSet::none();
        for (const auto& m : modes) opt.modes.add(*parse_mode(m));
      }
      opt.profile_form = profile == "grid" ? ProfileForm::grid : ProfileForm::normal_approx;
      opt.cv_policy = cv_policy == "always" ? CvPolicy::always : CvPolicy::on_demand;
      opt.leave_one_out = !no_loo;
      opt.workers = run_mc.threads;
      if (!run_model.empty()) {
        const auto m = parse_file(run_model, io::parse_error_model);
        opt.fixed_model = ErrorModel{m.mean, m.sd};
      }
      warn_small(run_mc.replicates);
      if (looks.size() > schedule.looks())
        throw InputError("looks file has " + std::to_string(looks.size()) + " looks, schedule has " +
                         std::to_string(schedule.looks()));
      const auto result = run_surveillance(schedule, looks, controls, run_mc.config(), opt);
      for (const auto& lm : result.look_models)
        if (lm.fallback) std::cerr << "warning: look " << lm.look << ": error model carried over from an earlier look\n";
      const auto report = type1_report(result);
      run_out.write(run_out.tsv() ? io::format_run(result, report) : text_run(result, report));
    } else if (sim->parsed()) {
      auto scenarios = standard_scenarios(full ? kFullScale : kDeskScale);
      if (list) {
        std::string names;
        for (const auto& s : scenarios) names += s.name + '\n';
        sim_out.write(names);
        return 0;
      }
      if (scenario != "all") {
        std::erase_if(scenarios, [&](const SimulationScenario& s) { return s.name != scenario; });
        if (scenarios.empty()) throw InputError("unknown scenario '" + scenario + "'; see --list");
      }
      for (auto& s : scenarios) {
        if (repeats > 0) s.repeats = repeats;
        if (sim_replicates > 0) s.replicates = sim_replicates;
        s.bias_draw = sim_bias == "per-look" ? BiasDraw::per_look : BiasDraw::per_replicate;
        s.profile_form = sim_profile == "grid" ? ProfileForm::grid : ProfileForm::normal_approx;
      }
      std::ostringstream text;
      if (sim_out.tsv()) {
        text << io::format_tidy_header(scenarios.front().replicates, scenarios.front().repeats);
      } else {
        text << "mean type 1 error per mode; " << scenarios.front().repeats << " repeats, "
             << scenarios.front().replicates << " replicates\nscenario";
        for (Mode m : kAllModes) text << '\t' << mode_name(m);
        text << '\n';
      }
      for (const auto& s : scenarios) {
        std::cerr << "running " << s.name << '\n';
        const auto report = run_scenario(s, sim_threads);
        if (sim_out.tsv()) {
          text << io::format_tidy_rows(tidy_rows(report));
        } else {
          text << s.name;
          for (Mode m : kAllModes) text << '\t' << io::format_double(mean_type1(report, m));
          text << '\n';
        }
      }
      sim_out.write(text.str());
    } else if (confounding->parsed()) {
      if (no_confounding) conf.x_slope = conf.y_slope = 0.0;
      const auto points = confounding_demo(sizes, conf);
      if (conf_out.tsv()) {
        conf_out.write(io::format_confounding(points, conf));
      } else {
        std::ostringstream text;
        for (const auto& p : points)
          text << "n=" << p.sample_size << "\tRR " << io::format_double(p.relative_risk) << "\t95% CI ["
               << io::format_double(p.ci_lower) << ", " << io::format_double(p.ci_upper) << "]\n";
        conf_out.write(text.str());
      }
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ConfigurationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const InsufficientControls& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
