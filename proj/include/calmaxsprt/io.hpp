#ifndef CALMAXSPRT_IO_HPP
#define CALMAXSPRT_IO_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "calmaxsprt/error_model.hpp"
#include "calmaxsprt/errors.hpp"
#include "calmaxsprt/likelihood.hpp"
#include "calmaxsprt/maxsprt.hpp"
#include "calmaxsprt/simharness.hpp"
#include "calmaxsprt/surveillance.hpp"

// Delimited text files: '#' lines are comments, the first other line is the header, fields are
// separated by tabs or commas (whichever the header uses). "NA" stands for a missing number.
// Writers emit "# calmaxsprt <kind> v1" first; multi-table outputs separate tables with
// "# section: <name>" lines.

namespace calmaxsprt::io {

inline std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string version_line(std::string_view kind) { return "# calmaxsprt " + std::string(kind) + " v1"; }

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // source line of each row
  char delimiter = '\t';

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
  std::size_t require(std::string_view name) const {
    if (auto c = column(name)) return *c;
    throw ParseError("missing column '" + std::string(name) + "'", 0);
  }
};

inline std::vector<std::string> split(std::string_view line, char delimiter) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    std::string_view f = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\r')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
    fields.emplace_back(f);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

/// Tables keyed by section name; a file without section markers has one table named "".
inline std::map<std::string, Table> read_sections(std::istream& in) {
  std::map<std::string, Table> tables;
  std::string section;
  Table* current = nullptr;
  bool have_header = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.front() == '#') {
      constexpr std::string_view marker = "# section:";
      if (std::string_view(line).starts_with(marker)) {
        section = std::string(split(std::string_view(line).substr(marker.size()), '\n').front());
        if (tables.contains(section)) throw ParseError("duplicate section '" + section + "'", line_no);
        current = &tables[section];
        have_header = false;
      }
      continue;
    }
    if (!current) current = &tables[section];
    if (!have_header) {
      current->delimiter = line.find('\t') != std::string::npos ? '\t' : ',';
      current->header = split(line, current->delimiter);
      have_header = true;
      continue;
    }
    auto fields = split(line, current->delimiter);
    if (fields.size() != current->header.size())
      throw ParseError("expected " + std::to_string(current->header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    current->rows.push_back(std::move(fields));
    current->lines.push_back(line_no);
  }
  return tables;
}

inline Table read_table(std::istream& in) {
  auto tables = read_sections(in);
  if (tables.empty()) throw ParseError("no table found", 0);
  if (tables.size() != 1) throw ParseError("expected a single table", 0);
  return std::move(tables.begin()->second);
}

inline Table read_table(const std::string& text) {
  std::istringstream in(text);
  return read_table(in);
}

inline double parse_double(const std::string& s, std::size_t line, std::string_view what) {
  if (s == "NA" || s == "NaN" || s == "nan") return kMissing;
  if (s == "Inf" || s == "inf") return INFINITY;
  if (s == "-Inf" || s == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("bad number '" + s + "' in " + std::string(what), line);
  return v;
}

inline double parse_finite(const std::string& s, std::size_t line, std::string_view what) {
  const double v = parse_double(s, line, what);
  if (!std::isfinite(v)) throw ParseError(std::string(what) + " must be finite, got '" + s + "'", line);
  return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line, std::string_view what) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("bad integer '" + s + "' in " + std::string(what), line);
  return v;
}

inline bool parse_bool(const std::string& s, std::size_t line, std::string_view what) {
  if (s == "1" || s == "true" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "FALSE") return false;
  throw ParseError("bad boolean '" + s + "' in " + std::string(what), line);
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields, char delimiter) {
  for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? std::string(1, delimiter) : "") << fields[i];
  out << '\n';
}

// ---------------------------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------------------------

/// outcome_id, log_rr, se_log_rr
inline std::vector<LikelihoodProfile> parse_estimates(const Table& t) {
  const auto id = t.require("outcome_id"), b = t.require("log_rr"), se = t.require("se_log_rr");
  std::vector<LikelihoodProfile> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const double beta = parse_finite(row[b], t.lines[r], "log_rr");
    const double s = parse_finite(row[se], t.lines[r], "se_log_rr");
    if (!(s > 0.0)) throw ParseError("se_log_rr must be positive", t.lines[r]);
    out.push_back(LikelihoodProfile::normal(row[id], beta, s));
  }
  return out;
}

/// outcome_id, log_rr_grid_point, log_likelihood; one profile per outcome, in first-seen order.
inline std::vector<LikelihoodProfile> parse_grid_profiles(const Table& t) {
  const auto id = t.require("outcome_id"), x = t.require("log_rr_grid_point"), ll = t.require("log_likelihood");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> points;
  std::map<std::string, std::size_t> first_line;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto [it, fresh] = points.try_emplace(row[id]);
    if (fresh) {
      order.push_back(row[id]);
      first_line[row[id]] = t.lines[r];
    }
    it->second.first.push_back(parse_finite(row[x], t.lines[r], "log_rr_grid_point"));
    it->second.second.push_back(parse_finite(row[ll], t.lines[r], "log_likelihood"));
  }
  std::vector<LikelihoodProfile> out;
  for (const auto& name : order) {
    auto& [xs, ys] = points[name];
    try {
      out.push_back(LikelihoodProfile::grid(name, xs, ys));
    } catch (const DomainError& e) {
      throw ParseError("outcome '" + name + "': " + e.what(), first_line[name]);
    }
  }
  return out;
}

/// model, t, e_t, p, alpha; one row per look.
inline LookSchedule parse_schedule(const Table& t) {
  const auto model = t.require("model"), look = t.require("t"), e = t.require("e_t"), p = t.require("p"),
             alpha = t.require("alpha");
  if (t.rows.empty()) throw ParseError("schedule has no looks", 0);
  const std::string kind = t.rows[0][model];
  if (kind != "poisson" && kind != "binomial")
    throw ParseError("model must be 'poisson' or 'binomial', got '" + kind + "'", t.lines[0]);
  std::vector<double> inc;
  double a = 0.0, prop = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.lines[r];
    if (row[model] != kind) throw ParseError("model changes within the schedule", line);
    if (parse_int(row[look], line, "t") != static_cast<std::int64_t>(r + 1))
      throw ParseError("looks must be numbered 1, 2, ... in order", line);
    inc.push_back(parse_finite(row[e], line, "e_t"));
    const double row_alpha = parse_finite(row[alpha], line, "alpha");
    if (r > 0 && row_alpha != a) throw ParseError("alpha changes within the schedule", line);
    a = row_alpha;
    if (kind == "binomial") {
      const double row_p = parse_finite(row[p], line, "p");
      if (r > 0 && row_p != prop) throw ParseError("p changes within the schedule", line);
      prop = row_p;
    }
  }
  try {
    if (kind == "poisson") return LookSchedule(PoissonModel{}, inc, a);
    return LookSchedule(BinomialModel{prop}, inc, a);
  } catch (const DomainError& e) {
    throw ParseError(std::string("invalid schedule: ") + e.what(), 0);
  }
}

inline std::string format_schedule(const LookSchedule& s) {
  std::ostringstream out;
  out << version_line("schedule") << '\n';
  write_row(out, {"model", "t", "e_t", "p", "alpha"}, '\t');
  for (std::size_t t = 0; t < s.looks(); ++t)
    write_row(out,
              {s.is_binomial() ? "binomial" : "poisson", std::to_string(t + 1), format_double(s.expected_increments()[t]),
               s.is_binomial() ? format_double(s.exposure_proportion()) : "NA", format_double(s.alpha())},
              '\t');
  return out.str();
}

/// outcome_id, look, cumulative_observed[, cumulative_total] -> one observation per look.
inline std::vector<LookObservation> parse_looks(const Table& t) {
  const auto id = t.require("outcome_id"), look = t.require("look"), obs = t.require("cumulative_observed");
  const auto total = t.column("cumulative_total");
  std::map<std::int64_t, LookObservation> by_look;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.lines[r];
    const auto k = parse_int(row[look], line, "look");
    if (k < 1) throw ParseError("look must be >= 1", line);
    OutcomeCounts c{row[id], parse_int(row[obs], line, "cumulative_observed"), -1};
    if (c.cumulative_observed < 0) throw ParseError("cumulative_observed must be >= 0", line);
    if (total && row[*total] != "NA" && !row[*total].empty()) {
      c.cumulative_total = parse_int(row[*total], line, "cumulative_total");
      if (c.cumulative_total < 1) throw ParseError("cumulative_total must be >= 1", line);
    }
    auto& o = by_look[k];
    o.look_index = static_cast<std::size_t>(k);
    o.outcomes.push_back(std::move(c));
  }
  std::vector<LookObservation> out;
  for (auto& [k, o] : by_look) {
    if (static_cast<std::size_t>(k) != out.size() + 1)
      throw ParseError("looks file skips look " + std::to_string(out.size() + 1), 0);
    out.push_back(std::move(o));
  }
  return out;
}

inline std::set<std::string> parse_controls(const Table& t) {
  const auto id = t.require("outcome_id");
  std::set<std::string> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (!out.insert(t.rows[r][id]).second) throw ParseError("duplicate control '" + t.rows[r][id] + "'", t.lines[r]);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Error model and critical value records
// ---------------------------------------------------------------------------------------------

inline std::string format_error_model(const ErrorModel& m) {
  std::ostringstream out;
  out << version_line("error-model") << '\n';
  write_row(out, {"mean", "sd", "n_controls", "n_dropped", "converged"}, '\t');
  write_row(out,
            {format_double(m.mean), format_double(m.sd), std::to_string(m.n_controls), std::to_string(m.n_dropped),
             m.converged ? "1" : "0"},
            '\t');
  return out.str();
}

inline ErrorModel parse_error_model(const Table& t) {
  if (t.rows.size() != 1) throw ParseError("error model file needs exactly one record", 0);
  const auto& row = t.rows[0];
  const auto line = t.lines[0];
  ErrorModel m;
  m.mean = parse_finite(row[t.require("mean")], line, "mean");
  m.sd = parse_finite(row[t.require("sd")], line, "sd");
  if (m.sd < 0.0) throw ParseError("sd must be >= 0", line);
  if (auto c = t.column("n_controls")) m.n_controls = static_cast<std::size_t>(parse_int(row[*c], line, "n_controls"));
  if (auto c = t.column("n_dropped")) m.n_dropped = static_cast<std::size_t>(parse_int(row[*c], line, "n_dropped"));
  if (auto c = t.column("converged")) m.converged = parse_bool(row[*c], line, "converged");
  return m;
}

inline std::string format_cv(const CriticalValueResult& r) {
  std::ostringstream out;
  out << version_line("cv") << '\n';
  write_row(out, {"cv", "attained_alpha", "replicates", "seed"}, '\t');
  write_row(out, {format_double(r.cv), format_double(r.attained_alpha), std::to_string(r.replicates), std::to_string(r.seed)},
            '\t');
  return out.str();
}

inline CriticalValueResult parse_cv(const Table& t) {
  if (t.rows.size() != 1) throw ParseError("cv file needs exactly one record", 0);
  const auto& row = t.rows[0];
  const auto line = t.lines[0];
  CriticalValueResult r;
  r.cv = parse_double(row[t.require("cv")], line, "cv");
  r.attained_alpha = parse_double(row[t.require("attained_alpha")], line, "attained_alpha");
  r.replicates = static_cast<std::uint64_t>(parse_int(row[t.require("replicates")], line, "replicates"));
  r.seed = std::stoull(row[t.require("seed")]);
  return r;
}

// ---------------------------------------------------------------------------------------------
// Surveillance results
// ---------------------------------------------------------------------------------------------

/// Flattened per-outcome, per-look row of a surveillance run.
struct ResultRow {
  std::string outcome_id;
  bool negative_control = false;
  LookStatistics stats;
};

inline std::vector<std::string> result_header() {
  std::vector<std::string> h{"outcome_id", "negative_control", "look", "cumulative_observed", "cumulative_total",
                             "informative", "beta_hat", "se", "llr", "p_uncalibrated", "p_calibrated", "cv",
                             "cv_calibrated", "model_mean", "model_sd", "model_n_controls", "model_fallback"};
  for (Mode m : kAllModes) h.push_back("signal_" + std::string(mode_name(m)));
  return h;
}

inline std::vector<ResultRow> result_rows(const SurveillanceResult& r) {
  std::vector<ResultRow> rows;
  for (std::size_t t = 0; !r.outcomes.empty() && t < r.outcomes.front().looks.size(); ++t)
    for (const auto& o : r.outcomes) rows.push_back({o.outcome_id, o.negative_control, o.looks[t]});
  return rows;
}

inline std::string format_run(const SurveillanceResult& r, const Type1Report& report) {
  std::ostringstream out;
  out << version_line("run") << '\n';
  out << "# replicates: " << r.replicates << "\n# seed: " << r.seed << '\n';
  out << "# section: looks\n";
  write_row(out, result_header(), '\t');
  for (const auto& row : result_rows(r)) {
    const auto& s = row.stats;
    std::vector<std::string> f{row.outcome_id,
                               row.negative_control ? "1" : "0",
                               std::to_string(s.look),
                               std::to_string(s.cumulative_observed),
                               std::to_string(s.cumulative_total),
                               s.informative ? "1" : "0",
                               format_double(s.beta_hat),
                               format_double(s.se),
                               format_double(s.llr),
                               format_double(s.p_uncalibrated),
                               format_double(s.p_calibrated),
                               format_double(s.cv),
                               format_double(s.cv_calibrated),
                               s.model ? format_double(s.model->mean) : "NA",
                               s.model ? format_double(s.model->sd) : "NA",
                               s.model ? std::to_string(s.model->n_controls) : "NA",
                               s.model_fallback ? "1" : "0"};
    for (bool b : s.signaled) f.push_back(b ? "1" : "0");
    write_row(out, f, '\t');
  }
  out << "# section: type1\n";
  write_row(out, {"mode", "signals", "denominator", "rate"}, '\t');
  for (Mode m : kAllModes) {
    const auto k = static_cast<std::size_t>(m);
    write_row(out,
              {std::string(mode_name(m)), std::to_string(report.signals[k]), std::to_string(report.denominator),
               format_double(report.rate[k])},
              '\t');
  }
  return out.str();
}

inline std::vector<ResultRow> parse_result_rows(const Table& t) {
  for (const auto& name : result_header()) t.require(name);
  std::vector<ResultRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const auto line = t.lines[r];
    const auto get = [&](std::string_view name) -> const std::string& { return f[*t.column(name)]; };
    ResultRow row;
    row.outcome_id = get("outcome_id");
    row.negative_control = parse_bool(get("negative_control"), line, "negative_control");
    auto& s = row.stats;
    s.look = static_cast<std::size_t>(parse_int(get("look"), line, "look"));
    s.cumulative_observed = parse_int(get("cumulative_observed"), line, "cumulative_observed");
    s.cumulative_total = parse_int(get("cumulative_total"), line, "cumulative_total");
    s.informative = parse_bool(get("informative"), line, "informative");
    s.beta_hat = parse_double(get("beta_hat"), line, "beta_hat");
    s.se = parse_double(get("se"), line, "se");
    s.llr = parse_double(get("llr"), line, "llr");
    s.p_uncalibrated = parse_double(get("p_uncalibrated"), line, "p_uncalibrated");
    s.p_calibrated = parse_double(get("p_calibrated"), line, "p_calibrated");
    s.cv = parse_double(get("cv"), line, "cv");
    s.cv_calibrated = parse_double(get("cv_calibrated"), line, "cv_calibrated");
    if (get("model_mean") != "NA") {
      ErrorModel m;
      m.mean = parse_double(get("model_mean"), line, "model_mean");
      m.sd = parse_double(get("model_sd"), line, "model_sd");
      m.n_controls = static_cast<std::size_t>(parse_int(get("model_n_controls"), line, "model_n_controls"));
      s.model = m;
    }
    s.model_fallback = parse_bool(get("model_fallback"), line, "model_fallback");
    for (Mode m : kAllModes)
      s.signaled[static_cast<std::size_t>(m)] =
          parse_bool(get("signal_" + std::string(mode_name(m))), line, "signal flag");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Type1Report parse_type1(const Table& t) {
  const auto mode = t.require("mode"), signals = t.require("signals"), den = t.require("denominator"),
             rate = t.require("rate");
  Type1Report report;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto m = parse_mode(t.rows[r][mode]);
    if (!m) throw ParseError("unknown mode '" + t.rows[r][mode] + "'", t.lines[r]);
    const auto k = static_cast<std::size_t>(*m);
    report.signals[k] = static_cast<std::size_t>(parse_int(t.rows[r][signals], t.lines[r], "signals"));
    report.denominator = static_cast<std::size_t>(parse_int(t.rows[r][den], t.lines[r], "denominator"));
    report.rate[k] = parse_double(t.rows[r][rate], t.lines[r], "rate");
  }
  return report;
}

// ---------------------------------------------------------------------------------------------
// Simulation outputs
// ---------------------------------------------------------------------------------------------

inline std::string format_tidy_header(std::uint64_t replicates, std::size_t repeats) {
  std::ostringstream out;
  out << version_line("simulation") << '\n';
  out << "# replicates: " << replicates << "\n# repeats: " << repeats << '\n';
  write_row(out, {"scenario", "repeat", "mode", "effect_size", "rate_type", "value"}, '\t');
  return out.str();
}

inline std::string format_tidy_rows(const std::vector<TidyRow>& rows) {
  std::ostringstream out;
  for (const auto& r : rows)
    write_row(out,
              {r.scenario, std::to_string(r.repeat), std::string(mode_name(r.mode)), format_double(r.effect_size),
               r.rate_type, format_double(r.value)},
              '\t');
  return out.str();
}

inline std::vector<TidyRow> parse_tidy_rows(const Table& t) {
  const auto sc = t.require("scenario"), rep = t.require("repeat"), mode = t.require("mode"),
             eff = t.require("effect_size"), type = t.require("rate_type"), val = t.require("value");
  std::vector<TidyRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const auto m = parse_mode(f[mode]);
    if (!m) throw ParseError("unknown mode '" + f[mode] + "'", t.lines[r]);
    rows.push_back({f[sc], static_cast<std::size_t>(parse_int(f[rep], t.lines[r], "repeat")), *m,
                    parse_double(f[eff], t.lines[r], "effect_size"), f[type], parse_double(f[val], t.lines[r], "value")});
  }
  return rows;
}

inline std::string format_confounding(const std::vector<ConfoundingPoint>& points, const ConfoundingConfig& cfg) {
  std::ostringstream out;
  out << version_line("confounding") << '\n';
  out << "# repeats: " << cfg.repeats << "\n# seed: " << cfg.seed << '\n';
  write_row(out, {"sample_size", "relative_risk", "ci_lower", "ci_upper", "se_log"}, '\t');
  for (const auto& p : points)
    write_row(out,
              {std::to_string(p.sample_size), format_double(p.relative_risk), format_double(p.ci_lower),
               format_double(p.ci_upper), format_double(p.se_log)},
              '\t');
  return out.str();
}

inline std::vector<ConfoundingPoint> parse_confounding(const Table& t) {
  std::vector<ConfoundingPoint> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const auto line = t.lines[r];
    out.push_back({parse_int(f[t.require("sample_size")], line, "sample_size"),
                   parse_double(f[t.require("relative_risk")], line, "relative_risk"),
                   parse_double(f[t.require("ci_lower")], line, "ci_lower"),
                   parse_double(f[t.require("ci_upper")], line, "ci_upper"),
                   parse_double(f[t.require("se_log")], line, "se_log")});
  }
  return out;
}

}  // namespace calmaxsprt::io

#endif
