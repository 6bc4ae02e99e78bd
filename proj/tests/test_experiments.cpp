#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "bwlab/experiments.hpp"

namespace bwlab {
namespace {

namespace fs = std::filesystem;

ExperimentConfig config(const std::string& text) { return parse_config_text(text); }

double summary_number(const RunRecord& r, const char* key) { return r.summary.at(key).get<double>(); }

const Assertion& find_assertion(const RunRecord& r, const std::string& name) {
  for (const Assertion& a : r.assertions)
    if (a.name == name) return a;
  throw std::runtime_error("no assertion " + name);
}

TEST(Helpers, PlateauIsMedianOfLastQuarter) {
  const std::vector<double> err{9, 8, 7, 6, 5, 4, 3, 2};
  EXPECT_EQ(tail_start(err.size()), 6u);
  EXPECT_DOUBLE_EQ(plateau_value(err), 2.5);
  EXPECT_FALSE(is_plateaued(err));
  EXPECT_TRUE(is_plateaued({5, 3, 1, 1.01, 1.0, 1.02, 1.01, 1.0}));
  EXPECT_FALSE(is_plateaued({1.0}));
}

TEST(Helpers, RateFitRecoversGeometricDecay) {
  std::vector<double> err;
  for (int t = 0; t < 30; ++t) err.push_back(std::max(std::pow(0.7, t), 1e-3));
  const RateFit f = pre_plateau_rate(err);
  EXPECT_FALSE(f.fit_failed);
  EXPECT_GT(f.points, 3);
  EXPECT_EQ(f.points, 20);
  EXPECT_NEAR(f.rate, 0.7, 1e-12);
}

TEST(Helpers, ShortSegmentIsReportedFitFailureWithFallback) {
  const RateFit f = pre_plateau_rate({1.0, 0.1, 0.1, 0.1});
  EXPECT_TRUE(f.fit_failed);
  EXPECT_EQ(f.points, 2);
  EXPECT_NEAR(f.rate, 0.1, 1e-12);
}

TEST(Helpers, InitsLieInTheConfiguredBall) {
  const ExperimentConfig c = config("d = 6\nsnr = 2\n");
  for (std::uint64_t run = 0; run < 20; ++run) {
    const ThetaParams star = draw_theta_star(c, 2.0, 11, run);
    EXPECT_NEAR(star.mu.norm(), 2.0, 1e-12);
    EXPECT_NEAR(star.zeta(), 0.2, 1e-12);
    const ThetaParams init = draw_init(c, star, 11, run);
    EXPECT_EQ(init.beta, 0.0);
    EXPECT_LE((init.mu - star.mu).norm(), 0.25 * star.mu.norm() + 1e-12);
  }
}

// ||mu*|| stays at 1.5 while the noise level shrinks.
TEST(Convergence, NearNoiselessDataConvergesWithinThreeSteps) {
  ExperimentConfig c = config("d = 5\nn = 400\nsigma = 1e-6\nsnr = 1.5e6\n");
  const ThetaParams star = draw_theta_star(c, c.eta(1.5e6), 3, 0);
  const ObservedSequence x = sample_sequence(star, c.n, 0, stream_seed(3, 0, Purpose::kData)).observed;
  const EmRunResult r = run_single_em(c, x, star, draw_init(c, star, 3, 0), 10);
  const EmTrajectory& tr = r.trajectory;
  // the (z_0, z_1) pair still moves zeta by a factor 1/n per step
  EXPECT_LT(tr.opt_err[3], 1e-6);
  EXPECT_LT(plateau_value(tr.mu_err), 1e-6 * star.mu.norm());
  EXPECT_TRUE(r.summary.plateaued);
}

TEST(Convergence, RecordsEveryRunAndEchoesConfig) {
  const ExperimentConfig c = config("kind = convergence\nd = 3\nn = 200\nT = 10\nn_inits = 3\nseeds = 1,2\n");
  const RunOutput out = compute_experiment(c);
  EXPECT_EQ(out.record.config, c);
  EXPECT_EQ(out.record.runs.size(), 6u);
  EXPECT_EQ(out.record.assertions.size(), 3u);
  for (const RunSummary& r : out.record.runs) EXPECT_EQ(r.iterations, 10);
}

TEST(Convergence, EveryPlotHasItsCsv) {
  const fs::path dir = fs::temp_directory_path() / "bwlab_test_experiments_paired";
  fs::remove_all(dir);
  ExperimentConfig c = config("kind = convergence\nd = 3\nn = 150\nT = 8\nn_inits = 2\nseeds = 1\n");
  c.output_dir = dir.string();
  const RunRecord r = run_experiment(c);
  for (const std::string& f : r.files) {
    if (fs::path(f).extension() != ".svg") continue;
    const std::string stem = fs::path(f).stem().string();
    EXPECT_TRUE(fs::exists(dir / (stem + "_plot.csv"))) << stem;
  }
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Determinism, SameConfigGivesIdenticalTables) {
  const ExperimentConfig c = config("kind = snr_sweep\nd = 3\nn = 200\nT = 10\nsnr = 1,2\nn_inits = 2\nseeds = 4,5\n");
  const RunOutput a = compute_experiment(c);
  const RunOutput b = compute_experiment(c);
  ASSERT_EQ(a.tables.size(), b.tables.size());
  for (std::size_t i = 0; i < a.tables.size(); ++i) EXPECT_EQ(render_csv(a.tables[i].table), render_csv(b.tables[i].table));
}

TEST(Determinism, ThreadCountDoesNotChangeResults) {
  const ExperimentConfig c = config("kind = n_scaling\nd = 3\nn_grid = 200,400\nseeds = 1,2,3\nn_inits = 1\n");
  setenv("BWLAB_THREADS", "1", 1);
  const RunOutput serial = compute_experiment(c);
  setenv("BWLAB_THREADS", "4", 1);
  const RunOutput parallel = compute_experiment(c);
  unsetenv("BWLAB_THREADS");
  EXPECT_EQ(render_csv(serial.tables.front().table), render_csv(parallel.tables.front().table));
}

TEST(SnrSweep, RateOrderingHoldsOnDisjointSeeds) {
  for (const char* seeds : {"1,2,3,4,5", "6,7,8,9,10"}) {
    const RunOutput out = compute_experiment(
        config(std::string("kind = snr_sweep\nd = 5\nn = 500\nsnr = 1,3\nn_inits = 1\nseeds = ") + seeds + "\n"));
    const auto rates = out.record.summary.at("median_rates").get<std::vector<double>>();
    EXPECT_LT(rates[1], rates[0]) << seeds;
  }
}

TEST(NScaling, QuadruplingNHalvesThePlateau) {
  const RunOutput out =
      compute_experiment(config("kind = n_scaling\nd = 10\nn_grid = 500,2000\nsnr = 1.5\nn_inits = 1\nseeds = 1,2,3,4,5,6,7,8\n"));
  const auto med = out.record.summary.at("median_plateau").get<std::vector<double>>();
  EXPECT_NEAR(med[1] / med[0], 0.5, 0.15);
}

TEST(NScaling, LargerDimensionRaisesTheFloor) {
  auto floor_at = [](int d) {
    const RunOutput out = compute_experiment(config("kind = n_scaling\nd = " + std::to_string(d) +
                                                    "\nn_grid = 1000\nsnr = 1.5\nn_inits = 1\nseeds = 1,2,3,4,5,6\n"));
    return out.record.summary.at("median_plateau").get<std::vector<double>>().front();
  };
  EXPECT_GT(floor_at(20), floor_at(5));
}

TEST(Mixing, ChecksRunWithoutViolations) {
  const RunOutput out = compute_experiment(
      config("kind = mixing_checks\nd = 2\ninstances = 20\nl_max = 6\nseq_len = 60\ntrials = 8\nk_grid = 1,2,3,4,5,6\n"));
  EXPECT_EQ(summary_number(out.record, "covariance_violations"), 0.0);
  EXPECT_TRUE(find_assertion(out.record, "covariance_bound_no_violations").passed);
}

TEST(Truncation, GapsShrinkWithWindowSize) {
  const RunOutput out =
      compute_experiment(config("kind = truncation\nd = 3\nn = 80\nk_grid = 0,1,2,3,4,5,6\nseeds = 1,2\n"));
  EXPECT_LT(summary_number(out.record, "median_tv_slope"), 0.0);
  EXPECT_LT(summary_number(out.record, "median_m_slope"), 0.0);
  EXPECT_NEAR(summary_number(out.record, "target_slope"), std::log(0.8), 1e-12);
}

TEST(Contraction, ContractsAtHighSnr) {
  const RunOutput out = compute_experiment(config(
      "kind = contraction\nd = 2\nsnr = 9\nsnr_is_squared = true\nk = 8\nprobes = 12\nmc_sequences = 16\nseq_len = 100\nseeds = 1\n"));
  const auto kappa = out.record.summary.at("median_kappa_hat").get<std::vector<double>>();
  const auto se = out.record.summary.at("median_std_err").get<std::vector<double>>();
  EXPECT_LT(kappa[0] + 2.0 * se[0], 1.0);
}

}  // namespace
}  // namespace bwlab
