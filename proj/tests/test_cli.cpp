#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "calmaxsprt/io.hpp"
#include "oracles.hpp"

namespace calmaxsprt {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("calmaxsprt_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string file(const std::string& name, const std::string& content) {
    const auto path = (dir_ / name).string();
    std::ofstream(path) << content;
    return path;
  }

  static Result run(const std::string& args) {
    const std::string cmd = std::string(CALMAXSPRT_CLI) + " " + args + " 2>" + (dir_ / "stderr").string();
    FILE* pipe = ::popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = ::pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
  }

  static std::string stderr_text() {
    std::ifstream in(dir_ / "stderr");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static inline fs::path dir_;
};

TEST_F(Cli, ComputeCvOneLookPoisson) {
  const auto sched = file("s.csv", "# calmaxsprt schedule v1\nmodel,t,e_t,p,alpha\npoisson,1,4,NA,0.05\n");
  const auto r = run("compute-cv --schedule " + sched + " -S 100000 --seed 3");
  ASSERT_EQ(r.code, 0);
  const auto cv = io::parse_cv(io::read_table(r.out));
  EXPECT_NEAR(cv.cv, 1.545177, 1e-6);
  EXPECT_EQ(cv.replicates, 100000u);
  EXPECT_EQ(cv.seed, 3u);

  const auto null_model = file("m0.tsv", "mean\tsd\n0\t0\n");
  EXPECT_EQ(run("compute-cv --schedule " + sched + " -S 100000 --seed 3 --error-model " + null_model).out, r.out);

  const auto all = file("s1.csv", "model,t,e_t,p,alpha\npoisson,1,4,NA,1\n");
  EXPECT_EQ(io::parse_cv(io::read_table(run("compute-cv --schedule " + all).out)).cv, 0.0);
}

TEST_F(Cli, ComputeCvRejectsBadInput) {
  const auto bad = file("bad.csv", "model,t,e_t,p,alpha\npoisson,1,4,NA,0.05\npoisson,3,4,NA,0.05\n");
  EXPECT_EQ(run("compute-cv --schedule " + bad).code, 2);
  EXPECT_NE(stderr_text().find("line 3"), std::string::npos);
  EXPECT_EQ(run("compute-cv --schedule " + (dir_ / "missing.csv").string()).code, 2);
  const auto sched = file("ok.csv", "model,t,e_t,p,alpha\npoisson,1,4,NA,0.05\n");
  EXPECT_EQ(run("compute-cv --schedule " + sched + " -S 10").code, 2);
}

TEST_F(Cli, FitNull) {
  std::string rows = "outcome_id,log_rr,se_log_rr\n";
  for (int i = 0; i < 50; ++i) rows += "nc" + std::to_string(i) + ",0,0.01\n";
  auto r = run("fit-null --estimates " + file("zero.csv", rows));
  ASSERT_EQ(r.code, 0);
  auto m = io::parse_error_model(io::read_table(r.out));
  EXPECT_NEAR(m.mean, 0.0, 1e-3);
  EXPECT_LE(m.sd, 0.01);

  r = run("fit-null --estimates " + file("sym.csv", "outcome_id,log_rr,se_log_rr\na,0.5,0.1\nb,-0.5,0.1\n"));
  EXPECT_NEAR(io::parse_error_model(io::read_table(r.out)).mean, 0.0, 1e-3);

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> bias(0.2, 0.2), noise;
  std::uniform_real_distribution<double> se_dist(0.05, 0.3);
  std::vector<double> est, ses;
  rows = "outcome_id\tlog_rr\tse_log_rr\n";
  for (int i = 0; i < 100; ++i) {
    const double se = se_dist(rng);
    est.push_back(bias(rng) + se * noise(rng));
    ses.push_back(se);
    rows += "nc" + std::to_string(i) + "\t" + io::format_double(est.back()) + "\t" + io::format_double(se) + "\n";
  }
  r = run("fit-null --estimates " + file("synthetic.tsv", rows));
  m = io::parse_error_model(io::read_table(r.out));
  const auto [mu, sigma] = oracle::grid_search_fit(est, ses);
  EXPECT_NEAR(m.mean, mu, 0.01);
  EXPECT_NEAR(m.sd, sigma, 0.01);
}

TEST_F(Cli, FitNullErrors) {
  EXPECT_EQ(run("fit-null --estimates " + file("e1.csv", "outcome_id,log_rr,se_log_rr\na,0.1,0.1\nb,oops,0.1\n")).code, 2);
  EXPECT_NE(stderr_text().find("line 3"), std::string::npos);
  EXPECT_EQ(run("fit-null --estimates " + file("e2.csv", "outcome_id,log_rr,se_log_rr\na,0.1,0.1\n")).code, 2);
  // Two of three grid profiles peak on the boundary: no usable pair left to fit.
  const auto grid = file("g.csv",
                         "outcome_id,log_rr_grid_point,log_likelihood\n"
                         "a,0,3\na,1,2\na,2,1\nb,0,1\nb,1,2\nb,2,3\nc,0,1\nc,1,2\nc,2,1\n");
  EXPECT_EQ(run("fit-null --grid-profiles " + grid).code, 3);
  EXPECT_EQ(run("fit-null").code, 2);
}

std::string looks_file(std::size_t looks, bool biased) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> tau_dist(0.2, 0.2);
  std::string s = "outcome_id,look,cumulative_observed\n";
  for (int i = 0; i < 30; ++i) {
    const double tau = biased ? tau_dist(rng) : 0.0;
    std::poisson_distribution<int> d(10.0 * std::exp(tau));
    // Always draw six looks so shorter files are prefixes of longer ones.
    int cum = 0;
    for (std::size_t t = 1; t <= 6; ++t) {
      cum += biased ? d(rng) : 10;
      if (t <= looks) s += "nc" + std::to_string(i) + "," + std::to_string(t) + "," + std::to_string(cum) + "\n";
    }
  }
  return s;
}

std::string controls_file() {
  std::string s = "outcome_id\n";
  for (int i = 0; i < 30; ++i) s += "nc" + std::to_string(i) + "\n";
  return s;
}

TEST_F(Cli, RunAtExpectationNeverSignals) {
  const auto sched = file("r.csv", "model,t,e_t,p,alpha\npoisson,1,10,NA,0.05\npoisson,2,10,NA,0.05\npoisson,3,10,NA,0.05\n");
  const auto r = run("run --schedule " + sched + " --looks " + file("l.csv", looks_file(3, false)) + " --controls " +
                     file("c.csv", controls_file()) + " -S 2000 --profile normal");
  ASSERT_EQ(r.code, 0) << stderr_text();
  std::istringstream in(r.out);
  auto sections = io::read_sections(in);
  const auto t1 = io::parse_type1(sections["type1"]);
  EXPECT_EQ(t1.denominator, 30u);
  for (auto s : t1.signals) EXPECT_EQ(s, 0u);
}

TEST_F(Cli, RunTruncatedLooksGivesPrefix) {
  std::string sched = "model,t,e_t,p,alpha\n";
  for (int t = 1; t <= 4; ++t) sched += "poisson," + std::to_string(t) + ",10,NA,0.05\n";
  const auto s = file("r4.csv", sched);
  const auto c = file("c.csv", controls_file());
  const auto full = run("run --schedule " + s + " --looks " + file("l4.csv", looks_file(4, true)) + " --controls " + c +
                        " -S 2000 --profile normal");
  const auto part = run("run --schedule " + s + " --looks " + file("l2.csv", looks_file(2, true)) + " --controls " + c +
                        " -S 2000 --profile normal");
  ASSERT_EQ(full.code, 0);
  ASSERT_EQ(part.code, 0);
  const auto cut = [](const std::string& out) { return out.substr(0, out.find("# section: type1")); };
  const std::string prefix = cut(part.out);
  EXPECT_EQ(cut(full.out).substr(0, prefix.size()), prefix);
  EXPECT_GT(prefix.size(), 1000u);
}

TEST_F(Cli, RunCalibrationLowersTypeOneError) {
  std::string sched = "model,t,e_t,p,alpha\n";
  for (int t = 1; t <= 6; ++t) sched += "poisson," + std::to_string(t) + ",10,NA,0.05\n";
  const auto r = run("run --schedule " + file("r6.csv", sched) + " --looks " + file("l6.csv", looks_file(6, true)) +
                     " --controls " + file("c.csv", controls_file()) + " -S 5000 --profile normal");
  ASSERT_EQ(r.code, 0) << stderr_text();
  std::istringstream in(r.out);
  auto sections = io::read_sections(in);
  const auto t1 = io::parse_type1(sections["type1"]);
  EXPECT_LT(t1.rate[static_cast<std::size_t>(Mode::calibrated_maxsprt)],
            t1.rate[static_cast<std::size_t>(Mode::uncalibrated_per_look_p)]);
}

TEST_F(Cli, RunIdMismatchListsOffenders) {
  const auto sched = file("r1.csv", "model,t,e_t,p,alpha\npoisson,1,10,NA,0.05\n");
  const auto looks = file("l1.csv", "outcome_id,look,cumulative_observed\na,1,3\nb,1,4\n");
  const auto r = run("run --schedule " + sched + " --looks " + looks + " --controls " +
                     file("cx.csv", "outcome_id\na\nghost\nphantom\n") + " -S 2000");
  EXPECT_EQ(r.code, 2);
  const auto err = stderr_text();
  EXPECT_NE(err.find("ghost"), std::string::npos);
  EXPECT_NE(err.find("phantom"), std::string::npos);
}

TEST_F(Cli, SimulateListAndErrors) {
  const auto r = run("simulate --list");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 12);
  EXPECT_EQ(run("simulate --scenario nope").code, 2);
}

TEST_F(Cli, SimulateSmallSccsDeskScale) {
  const auto r = run("simulate --scenario sccs-small-mu0-sd0 --repeats 2");
  ASSERT_EQ(r.code, 0) << stderr_text();
  const auto rows = io::parse_tidy_rows(io::read_table(r.out));
  std::set<Mode> modes;
  std::set<std::size_t> repeats;
  for (const auto& row : rows) {
    modes.insert(row.mode);
    repeats.insert(row.repeat);
  }
  EXPECT_EQ(modes.size(), 4u);
  EXPECT_EQ(repeats.size(), 2u);
  EXPECT_NE(r.out.find("# replicates: 10000"), std::string::npos);
}

TEST_F(Cli, Confounding) {
  const auto r = run("confounding --sizes 10000,100000 --repeats 3");
  ASSERT_EQ(r.code, 0);
  const auto pts = io::parse_confounding(io::read_table(r.out));
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_GT(pts[1].relative_risk, 1.0);
  EXPECT_EQ(run("confounding --sizes 10").code, 2);
}

}  // namespace
}  // namespace calmaxsprt
