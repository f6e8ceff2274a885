#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qdt/nmax_detector.hpp"
#include "qdt/perception_model.hpp"
#include "qdt/photon_source.hpp"
#include "qdt/random.hpp"
#include "qdt/trial_simulator.hpp"
#include "test_util.hpp"

using namespace qdt;

namespace {

std::vector<Eigen::VectorXd> betaChains(int count, int length, double a, double b, Rng& rng, double shift = 0.0) {
  std::vector<Eigen::VectorXd> out(count, Eigen::VectorXd(length));
  for (auto& c : out)
    for (auto& x : c) x = rng.beta(a, b) + shift;
  return out;
}

}  // namespace

TEST(InverseCdf, Examples) {
  const std::vector<double> chain{3.0, 1.0, 4.0, 2.0};
  EXPECT_EQ(inverseCdf(test::span(chain), 0.5), 2.0);
  EXPECT_EQ(inverseCdf(test::span(chain), 1.0), 4.0);
  EXPECT_EQ(inverseCdf(test::span(chain), 0.01), 1.0);
  EXPECT_THROW(inverseCdf(test::span(chain), 0.0), std::invalid_argument);
  EXPECT_THROW(inverseCdf(test::span(chain), 1.1), std::invalid_argument);
  EXPECT_THROW(inverseCdf(std::span<const double>(), 0.5), std::invalid_argument);

  Rng rng(1);
  std::vector<double> u(100000);
  for (auto& x : u) x = rng.uniform();
  EXPECT_NEAR(inverseCdf(test::span(u), 0.25), 0.25, 0.01);
}

TEST(DeltaStatistic, Examples) {
  Rng rng(2);
  std::vector<double> a(100000), b(100000);
  for (auto& x : a) x = rng.beta(2.5, 0.5);
  for (auto& x : b) x = rng.uniform();
  for (double q : {0.1, 0.5, 0.9}) EXPECT_EQ(deltaStatistic(test::span(a), test::span(a), q), 0.0);

  std::vector<double> shifted(b);
  for (auto& x : shifted) x += 0.1;
  EXPECT_NEAR(deltaStatistic(test::span(shifted), test::span(b), 0.5), 0.1, 1e-12);
  EXPECT_NEAR(deltaStatistic(test::span(a), test::span(b), 0.5), 0.9044741819621789 - 0.5, 0.01);
}

TEST(CStatistic, DegenerateGuards) {
  const std::vector<Eigen::VectorXd> same(3, Eigen::VectorXd::LinSpaced(100, 0.0, 1.0));
  EXPECT_EQ(cStatistic(same, same, 0.5), 0.0);
  const CProfile p = cProfile(same, same);
  EXPECT_EQ(p.max_abs_c, 0.0);

  std::vector<Eigen::VectorXd> up(3, Eigen::VectorXd::LinSpaced(100, 1.0, 2.0));
  EXPECT_EQ(cStatistic(up, same, 0.5), std::numeric_limits<double>::infinity());
  EXPECT_EQ(cStatistic(same, up, 0.5), -std::numeric_limits<double>::infinity());

  const std::vector<Eigen::VectorXd> one(1, Eigen::VectorXd::LinSpaced(100, 0.0, 1.0));
  EXPECT_THROW(cStatistic(one, one, 0.5), std::invalid_argument);
  EXPECT_THROW(cStatistic(same, one, 0.5), std::invalid_argument);
}

TEST(CStatistic, MatchesPairwiseDefinition) {
  Rng rng(3);
  const auto prior = betaChains(4, 500, 2.5, 0.5, rng);
  const auto post = betaChains(4, 500, 2.0, 0.5, rng);
  std::vector<double> deltas;
  for (const auto& a : prior)
    for (const auto& b : post) deltas.push_back(deltaStatistic(test::span(a), test::span(b), 0.3));
  const double expected = test::mean(deltas) / std::sqrt(test::variance(deltas));
  EXPECT_NEAR(cStatistic(prior, post, 0.3), expected, 1e-12);
  const CProfile p = cProfile(prior, post);
  EXPECT_NEAR(p.c(29), expected, 1e-12);
  EXPECT_DOUBLE_EQ(p.q(29), 0.3);
  EXPECT_EQ(p.max_abs_c, p.c.cwiseAbs().maxCoeff());
}

TEST(CStatistic, DisjointSupportsGrowWithChainLength) {
  Rng rng(4);
  double prev = 0.0;
  for (int length : {100, 1000, 10000}) {
    const auto prior = betaChains(5, length, 2.0, 2.0, rng, 1.0);
    const auto post = betaChains(5, length, 2.0, 2.0, rng);
    const double c = cProfile(prior, post).max_abs_c;
    EXPECT_GT(c, 2.0 * prev) << length;
    prev = c;
  }
}

TEST(Calibration, FalseAlarmRate) {
  CutoffCalibration settings;
  settings.n_mult = 7;
  settings.n_mc = 1000;
  settings.replications = 2000;
  settings.seed = 1;
  const CutoffCalibration cal = calibrateCutoff(settings);
  ASSERT_EQ(cal.null_max_abs_c.size(), 2000u);
  EXPECT_TRUE(std::is_sorted(cal.null_max_abs_c.begin(), cal.null_max_abs_c.end()));
  EXPECT_GT(cal.cutoff, 0.0);

  // Independent null replications accepted at the calibrated cut-off.
  settings.seed = 2;
  const CutoffCalibration fresh = calibrateCutoff(settings);
  const auto accepted = std::count_if(fresh.null_max_abs_c.begin(), fresh.null_max_abs_c.end(),
                                      [&](double c) { return c < cal.cutoff; });
  EXPECT_NEAR(accepted / 2000.0, 0.975, 0.01);
}

TEST(Calibration, Preconditions) {
  CutoffCalibration s;
  s.replications = 499;
  EXPECT_THROW(calibrateCutoff(s), std::invalid_argument);
  s.replications = 500;
  s.n_mult = 1;
  EXPECT_THROW(calibrateCutoff(s), std::invalid_argument);
}

TEST(Calibration, KeyDependsOnSettingsOnly) {
  CutoffCalibration a, b;
  b.cutoff = 5.0;
  EXPECT_EQ(a.key(), b.key());
  b.n_mult = 5;
  EXPECT_NE(a.key(), b.key());
  b = a;
  b.shape.a = 3.0;
  EXPECT_NE(a.key(), b.key());
  b = a;
  b.q_grid(0) = 0.015;
  EXPECT_NE(a.key(), b.key());
}

namespace {

DetectionOptions quickOptions(bool flat) {
  DetectionOptions o;
  o.low.n_mult = 7;
  o.high = McmcConfig::lowIterations();
  o.high.n_iter = 7500;
  o.low.flat_likelihood = o.high.flat_likelihood = flat;
  o.cutoff = 1.8;
  return o;
}

}  // namespace

TEST(DetectNmax, FlatLikelihoodStopsAtStart) {
  const auto config = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  const auto sim = runExperiment(config, PerceptionModel::binomialCovering(0.05, 3.0), 3);
  const NmaxResult r = detectNmax(SigmaArray{sim.sigma, 1000}, config, quickOptions(true), 4);
  ASSERT_TRUE(r.success) << r.failure;
  EXPECT_EQ(r.n_max, 4);
  ASSERT_EQ(r.trace.size(), 2u);
  EXPECT_EQ(r.trace[0].stage, 1);
  EXPECT_EQ(r.trace[1].stage, 2);
  EXPECT_TRUE(r.trace[1].accepted);
  EXPECT_EQ(r.chains.layout.n_max, 4);
}

TEST(DetectNmax, TraceInvariants) {
  const auto config = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  const auto sim = runExperiment(config, PerceptionModel::binomialCovering(0.05, 3.0), 12);
  const NmaxResult r = detectNmax(SigmaArray{sim.sigma, 1000}, config, quickOptions(false), 13);
  ASSERT_TRUE(r.success) << r.failure;
  EXPECT_GE(r.n_max, 4);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    EXPECT_GE(r.trace[i].p_min, r.trace[i - 1].p_min);
    EXPECT_GE(r.trace[i].n_max, r.trace[i - 1].n_max);
  }
  EXPECT_LT(r.trace.back().max_abs_c, 1.8);
  EXPECT_EQ(r.trace.back().stage, 2);
  EXPECT_LT(r.trace[r.trace.size() - 2].max_abs_c, 1.8);
  for (const auto& s : r.trace) EXPECT_EQ(s.accepted, s.max_abs_c < 1.8);
}

TEST(DetectNmax, PerfectDetectorTerminatesEarly) {
  Eigen::VectorXd a = Eigen::VectorXd::Ones(30);
  a(0) = 0.5;
  const auto config = SourceConfig::withUniformNoise(1.0, 1.0, 1, 1000);
  const auto sim = runExperiment(config, PerceptionModel::fromAccuracies(a), 5);
  const NmaxResult r = detectNmax(SigmaArray{sim.sigma, 1000}, config, quickOptions(false), 6);
  ASSERT_TRUE(r.success) << r.failure;
  EXPECT_EQ(r.n_max, 3);
}

TEST(DetectNmax, FailsBeyondHardBound) {
  const auto config = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  const auto sim = runExperiment(config, PerceptionModel::binomialCovering(0.05, 3.0), 3);
  DetectionOptions o = quickOptions(false);
  o.cutoff = 1e-12;  // nothing is ever accepted
  o.hard_max = 5;
  const NmaxResult r = detectNmax(SigmaArray{sim.sigma, 1000}, config, o, 4);
  EXPECT_FALSE(r.success);
  EXPECT_FALSE(r.failure.empty());
  EXPECT_EQ(r.trace.size(), 2u);
}
