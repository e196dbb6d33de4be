#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "calmaxsprt/io.hpp"

namespace calmaxsprt {
namespace {

TEST(Io, FormatDoubleRoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, 1.5451774444795632, -2.5e-300, 0.0, 1e22}) {
    EXPECT_EQ(io::parse_double(io::format_double(x), 1, "x"), x);
  }
  EXPECT_EQ(io::format_double(kMissing), "NA");
  EXPECT_TRUE(std::isnan(io::parse_double("NA", 1, "x")));
}

TEST(Io, ReadsCommaAndTabTablesWithComments) {
  const auto csv = io::read_table("# calmaxsprt estimates v1\noutcome_id,log_rr,se_log_rr\na,0.1,0.2\n\nb,-0.3,0.4\n");
  EXPECT_EQ(csv.delimiter, ',');
  ASSERT_EQ(csv.rows.size(), 2u);
  EXPECT_EQ(csv.lines, (std::vector<std::size_t>{3, 5}));
  const auto tsv = io::read_table("outcome_id\tlog_rr\tse_log_rr\r\na\t0.1\t0.2\r\n");
  EXPECT_EQ(tsv.rows[0][2], "0.2");
  const auto profiles = io::parse_estimates(csv);
  EXPECT_EQ(profiles[1].outcome_id(), "b");
  EXPECT_EQ(mle_and_se(profiles[1]).standard_error, 0.4);
}

TEST(Io, ParseErrorsCarryLineNumbers) {
  try {
    io::parse_estimates(io::read_table("outcome_id,log_rr,se_log_rr\na,0.1,0.2\nb,zz,0.2\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    io::read_table("outcome_id,log_rr,se_log_rr\na,0.1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(io::parse_estimates(io::read_table("outcome_id,log_rr\na,1\n")), ParseError);
  EXPECT_THROW(io::parse_estimates(io::read_table("outcome_id,log_rr,se_log_rr\na,1,0\n")), ParseError);
}

TEST(Io, GridProfilesGroupByOutcome) {
  const auto t = io::read_table(
      "outcome_id,log_rr_grid_point,log_likelihood\na,-1,-2\nb,-1,-1\na,0,0\nb,0,-0.5\na,1,-2\nb,1,-3\n");
  const auto profiles = io::parse_grid_profiles(t);
  ASSERT_EQ(profiles.size(), 2u);
  EXPECT_EQ(profiles[0].outcome_id(), "a");
  EXPECT_EQ(mle_and_se(profiles[0]).point_estimate, 0.0);
  EXPECT_THROW(io::parse_grid_profiles(io::read_table("outcome_id,log_rr_grid_point,log_likelihood\na,0,0\na,1,1\n")),
               ParseError);
}

TEST(Io, ScheduleRoundTrip) {
  const LookSchedule b(BinomialModel{0.1152}, {16, 15, 16}, 0.05);
  EXPECT_EQ(io::parse_schedule(io::read_table(io::format_schedule(b))), b);
  const LookSchedule p(PoissonModel{}, {2.31, 2.31}, 0.01);
  EXPECT_EQ(io::parse_schedule(io::read_table(io::format_schedule(p))), p);
  EXPECT_THROW(io::parse_schedule(io::read_table("model,t,e_t,p,alpha\npoisson,2,1,NA,0.05\n")), ParseError);
  EXPECT_THROW(io::parse_schedule(io::read_table("model,t,e_t,p,alpha\nnormal,1,1,NA,0.05\n")), ParseError);
  EXPECT_THROW(io::parse_schedule(io::read_table("model,t,e_t,p,alpha\npoisson,1,1,NA,0.05\npoisson,2,1,NA,0.1\n")),
               ParseError);
  EXPECT_THROW(io::parse_schedule(io::read_table("model,t,e_t,p,alpha\npoisson,1,-1,NA,0.05\n")), ParseError);
}

TEST(Io, LooksAndControls) {
  const auto looks = io::parse_looks(io::read_table(
      "outcome_id,look,cumulative_observed,cumulative_total\na,2,5,20\na,1,3,10\nb,1,0,NA\nb,2,1,NA\n"));
  ASSERT_EQ(looks.size(), 2u);
  EXPECT_EQ(looks[0].look_index, 1u);
  EXPECT_EQ(looks[0].outcomes[0].cumulative_total, 10);
  EXPECT_EQ(looks[0].outcomes[1].cumulative_total, -1);
  EXPECT_THROW(io::parse_looks(io::read_table("outcome_id,look,cumulative_observed\na,2,1\n")), ParseError);
  const auto c = io::parse_controls(io::read_table("outcome_id\nx\ny\n"));
  EXPECT_EQ(c, (std::set<std::string>{"x", "y"}));
  EXPECT_THROW(io::parse_controls(io::read_table("outcome_id\nx\nx\n")), ParseError);
}

TEST(Io, RecordRoundTrips) {
  const ErrorModel m{0.2012345678901234, 0.19, 50, 2, false};
  EXPECT_EQ(io::parse_error_model(io::read_table(io::format_error_model(m))), m);
  CriticalValueResult cv;
  cv.cv = 1.5451774444795632;
  cv.attained_alpha = 0.021272;
  cv.replicates = 1000000;
  cv.seed = 18446744073709551615ULL;
  const auto back = io::parse_cv(io::read_table(io::format_cv(cv)));
  EXPECT_EQ(back.cv, cv.cv);
  EXPECT_EQ(back.attained_alpha, cv.attained_alpha);
  EXPECT_EQ(back.replicates, cv.replicates);
  EXPECT_EQ(back.seed, cv.seed);
}

TEST(Io, RunOutputRoundTrips) {
  const LookSchedule s(PoissonModel{}, {5.0, 5.0, 5.0}, 0.05);
  std::vector<LookObservation> looks{{1, {{"a", 0}, {"b", 6}, {"c", 4}, {"x", 12}}},
                                     {2, {{"a", 3}, {"b", 11}, {"c", 9}, {"x", 25}}},
                                     {3, {{"a", 9}, {"b", 15}, {"c", 16}, {"x", 40}}}};
  MonteCarloConfig mc;
  mc.replicates = 5000;
  SurveillanceOptions opt;
  opt.profile_form = ProfileForm::normal_approx;
  const auto result = run_surveillance(s, looks, {"a", "b", "c"}, mc, opt);
  const auto report = type1_report(result);
  std::istringstream in(io::format_run(result, report));
  auto sections = io::read_sections(in);
  ASSERT_TRUE(sections.contains("looks"));
  ASSERT_TRUE(sections.contains("type1"));
  const auto rows = io::parse_result_rows(sections["looks"]);
  const auto expected = io::result_rows(result);
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].outcome_id, expected[i].outcome_id);
    const auto& a = rows[i].stats;
    const auto& b = expected[i].stats;
    for (auto [x, y] : {std::pair{a.beta_hat, b.beta_hat}, {a.se, b.se}, {a.llr, b.llr}, {a.p_uncalibrated, b.p_uncalibrated},
                        {a.p_calibrated, b.p_calibrated}, {a.cv, b.cv}, {a.cv_calibrated, b.cv_calibrated}})
      EXPECT_TRUE((std::isnan(x) && std::isnan(y)) || x == y);
    EXPECT_EQ(a.model.has_value(), b.model.has_value());
    if (a.model) {
      EXPECT_EQ(a.model->mean, b.model->mean);
      EXPECT_EQ(a.model->sd, b.model->sd);
      EXPECT_EQ(a.model->n_controls, b.model->n_controls);
    }
    EXPECT_EQ(a.signaled, b.signaled);
  }
  const auto t1 = io::parse_type1(sections["type1"]);
  EXPECT_EQ(t1.denominator, report.denominator);
  EXPECT_EQ(t1.signals, report.signals);
}

TEST(Io, TidyAndConfoundingRoundTrip) {
  const std::vector<TidyRow> rows{{"hc-small-mu0-sd0", 0, Mode::calibrated_maxsprt, 1.0, "type1", 0.04},
                                  {"hc-small-mu0-sd0", 0, Mode::uncalibrated_per_look_p, 1.5, "type2", kMissing}};
  const auto back = io::parse_tidy_rows(io::read_table(io::format_tidy_header(10000, 20) + io::format_tidy_rows(rows)));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].mode, Mode::calibrated_maxsprt);
  EXPECT_EQ(back[0].value, 0.04);
  EXPECT_TRUE(std::isnan(back[1].value));
  const std::vector<ConfoundingPoint> pts{{10000, 1.2, 1.01, 1.4, 0.08}};
  const auto cp = io::parse_confounding(io::read_table(io::format_confounding(pts, {})));
  EXPECT_EQ(cp[0].sample_size, 10000);
  EXPECT_EQ(cp[0].ci_upper, 1.4);
}

}  // namespace
}  // namespace calmaxsprt
