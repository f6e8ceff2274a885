#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qdt/analysis.hpp"
#include "qdt/random.hpp"
#include "test_util.hpp"

using namespace qdt;

namespace {

std::vector<double> draws(int n, std::uint64_t seed, auto&& sampler) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = sampler(rng);
  return out;
}

double insideFraction(const std::vector<double>& v, const Interval& iv) {
  return std::count_if(v.begin(), v.end(), [&](double x) { return iv.contains(x); }) / double(v.size());
}

ReplicationRecord record(double r_sd, double hdi_low, double hdi_high, double mse) {
  ReplicationRecord r;
  r.r_sd = r_sd;
  r.mode_a1 = 0.5 * (hdi_low + hdi_high);
  r.hdi_a1 = {Interval{hdi_low, hdi_high}};
  r.mse = mse;
  r.n_max = 8;
  return r;
}

}  // namespace

TEST(Hdi, UniformAndNormal) {
  const auto u = draws(100000, 1, [](Rng& r) { return r.uniform(); });
  EXPECT_NEAR(hdi(test::span(u), 0.95).length(), 0.95, 0.01);
  const auto z = draws(100000, 2, [](Rng& r) { return r.normal(); });
  const Interval iv = hdi(test::span(z), 0.95);
  EXPECT_NEAR(iv.low, -1.959963984540054, 0.03);
  EXPECT_NEAR(iv.high, 1.959963984540054, 0.03);
}

TEST(Hdi, PointMassAndMassProperty) {
  const std::vector<double> point(500, 0.7);
  const Interval iv = hdi(test::span(point), 0.9);
  EXPECT_EQ(iv.length(), 0.0);
  EXPECT_EQ(iv.low, 0.7);
  for (int n : {100, 137, 1000, 5001}) {
    const auto x = draws(n, 3 + n, [](Rng& r) { return r.beta(2.0, 5.0); });
    for (double mass : {0.5, 0.9, 0.95}) {
      const double f = insideFraction(x, hdi(test::span(x), mass));
      EXPECT_GE(f, mass) << n << " " << mass;
      EXPECT_LE(f, mass + 2.0 / n) << n << " " << mass;
    }
  }
}

TEST(Hdi, Preconditions) {
  const std::vector<double> short_chain(99, 0.0);
  EXPECT_THROW(hdi(test::span(short_chain), 0.95), std::invalid_argument);
  const std::vector<double> ok(100, 0.0);
  EXPECT_THROW(hdi(test::span(ok), 1.0), std::invalid_argument);
  EXPECT_THROW(hdi(test::span(ok), 0.0), std::invalid_argument);
}

TEST(DensityMode, AnalyticBetaMode) {
  const auto x = draws(100000, 4, [](Rng& r) { return r.beta(2.0, 5.0); });
  EXPECT_NEAR(densityMode(test::span(x)), 0.2, 0.02);
}

TEST(DensityMode, SymmetricAndConstantChains) {
  const auto z = draws(50000, 5, [](Rng& r) { return r.normal(3.0, 0.5); });
  std::vector<double> s = z;
  std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
  EXPECT_NEAR(densityMode(test::span(z)), s[s.size() / 2], silvermanBandwidth(test::span(z)));
  const std::vector<double> c(200, 0.61);
  EXPECT_EQ(densityMode(test::span(c)), 0.61);
}

TEST(Kde, ReflectionMatchesBetaDensityAtBoundary) {
  // a = 0.5 + x / 2, x ~ beta(1, b): density at a = 0.5 is 2 b.
  for (double b : {2.0, 3.0}) {
    const auto a = draws(100000, 6, [b](Rng& r) { return 0.5 + 0.5 * r.beta(1.0, b); });
    const double f = kdeDensity(test::span(a), 0.5, silvermanBandwidth(test::span(a)), 0.5);
    EXPECT_NEAR(f / (2.0 * b), 1.0, 0.05) << b;
  }
}

TEST(SavageDickey, IdenticalChainsGiveZero) {
  const auto prior = draws(50000, 7, [](Rng& r) { return 0.5 + 0.5 * r.beta(1.0, 3.0); });
  EXPECT_NEAR(savageDickey(test::span(prior), test::span(prior)), 0.0, 0.5);
}

TEST(SavageDickey, TenfoldDensityRatio) {
  // Prior uniform on [0.5, 1] (density 2). Posterior: 10 % of the mass
  // uniform on [0.5, 1], the rest on [0.9, 1]; density 0.2 at 0.5.
  const auto prior = draws(400000, 8, [](Rng& r) { return 0.5 + 0.5 * r.uniform(); });
  const auto post = draws(400000, 9, [](Rng& r) {
    return r.uniform() < 0.1 ? 0.5 + 0.5 * r.uniform() : 0.9 + 0.1 * r.uniform();
  });
  EXPECT_NEAR(savageDickey(test::span(prior), test::span(post)), -10.0, 0.5);
}

TEST(SavageDickey, Antisymmetry) {
  const auto a = draws(50000, 10, [](Rng& r) { return 0.5 + 0.5 * r.beta(1.0, 3.0); });
  const auto b = draws(50000, 11, [](Rng& r) { return 0.5 + 0.5 * r.beta(1.5, 4.0); });
  EXPECT_NEAR(savageDickey(test::span(a), test::span(b)), -savageDickey(test::span(b), test::span(a)), 0.5);
}

TEST(SavageDickey, ZeroDensities) {
  const auto far = draws(1000, 12, [](Rng& r) { return 0.9 + 0.01 * r.uniform(); });
  const auto prior = draws(1000, 13, [](Rng& r) { return 0.5 + 0.5 * r.uniform(); });
  EXPECT_THROW(savageDickey(test::span(far), test::span(prior)), std::domain_error);
  EXPECT_EQ(savageDickey(test::span(prior), test::span(far)), -std::numeric_limits<double>::infinity());
}

TEST(Mse, Conventions) {
  Eigen::VectorXd truth(8);
  truth << 0.525, 0.55, 0.57, 0.59, 0.61, 0.63, 0.65, 0.66;
  EXPECT_EQ(mseAccuracies(truth, truth), 0.0);
  const Eigen::VectorXd off = truth.array() + 0.0129;
  EXPECT_NEAR(mseAccuracies(off, truth), 1.66e-4, 0.005e-4);
  EXPECT_THROW(mseAccuracies(truth, truth.head(7)), std::invalid_argument);
}

TEST(Summarize, FieldsAndLookup) {
  Eigen::MatrixXd s(20000, 2);
  Rng rng(14);
  for (int i = 0; i < 20000; ++i) {
    s(i, 0) = rng.normal(1.0, 0.1);
    s(i, 1) = 0.5 + 0.5 * rng.beta(2.0, 5.0);
  }
  const PosteriorSummary sum = summarize(s, {"x", "a"}, {0.5, 0.95}, {std::nullopt, 0.5});
  ASSERT_EQ(sum.parameters.size(), 2u);
  const auto& x = sum.at("x");
  EXPECT_NEAR(x.mean, 1.0, 0.005);
  EXPECT_NEAR(x.median, 1.0, 0.005);
  EXPECT_NEAR(x.mode, 1.0, 0.02);
  ASSERT_EQ(x.hdis.size(), 2u);
  EXPECT_LT(x.hdis[0].length(), x.hdis[1].length());
  EXPECT_NEAR(sum.at("a").mode, 0.6, 0.015);
  EXPECT_THROW(sum.at("y"), std::out_of_range);
}

TEST(BetaPosterior, ConjugateAndLiteral) {
  const ProbabilityEstimate e = betaPosteriorEstimate(70, 100, 0.95, false);
  EXPECT_EQ(e.post_a, 71.0);
  EXPECT_EQ(e.post_b, 31.0);
  EXPECT_NEAR(e.mean, 71.0 / 102.0, 1e-15);
  EXPECT_NEAR(e.low, 0.60385287, 1e-7);
  EXPECT_NEAR(e.high, 0.78102127, 1e-7);
  EXPECT_NEAR(betaPosteriorEstimate(100, 100, 0.95, false).mean, 101.0 / 102.0, 1e-15);
  const ProbabilityEstimate lit = betaPosteriorEstimate(70, 100, 0.95, true);
  EXPECT_EQ(lit.post_b, 101.0);
  EXPECT_NEAR(lit.mean, 71.0 / 172.0, 1e-15);
  EXPECT_THROW(betaPosteriorEstimate(5, 4, 0.95, false), std::invalid_argument);
}

TEST(BetaPosterior, ShrinksTowardFrequency) {
  double prev_gap = 1.0;
  for (int n : {10, 100, 1000, 10000}) {
    const int k = 7 * n / 10;
    const double gap = std::fabs(betaPosteriorEstimate(k, n, 0.95, false).mean - 0.7);
    EXPECT_LT(gap, prev_gap);
    EXPECT_NEAR(gap, std::fabs((k + 1.0) / (n + 2.0) - 0.7), 1e-15);
    prev_gap = gap;
  }
}

TEST(Merit, FromReplications) {
  std::vector<ReplicationRecord> recs;
  for (int i = 0; i < 10; ++i) {
    const bool strong = i < 7;
    // Seven replications below -5 dB, four of them below -10 dB.
    recs.push_back(record(strong ? (i < 4 ? -12.0 : -7.0) : 1.0, i < 5 ? 0.51 : 0.50, 0.55 + 0.001 * i,
                          1e-4 * (i + 1)));
  }
  MeritOptions opt;
  opt.bootstrap_resamples = 2000;
  opt.seed = 3;
  const MeritReport m = meritFromReplications(recs, opt);
  EXPECT_EQ(m.replications, 10);
  ASSERT_EQ(m.p_success.size(), 2u);
  EXPECT_EQ(m.p_success[0].successes, 7);
  EXPECT_EQ(m.p_success[1].successes, 4);
  EXPECT_NEAR(m.p_success[0].mean, 8.0 / 12.0, 1e-15);
  EXPECT_NEAR(m.p_success[0].bootstrap_se, std::sqrt(0.7 * 0.3 / 10), 0.02);
  // 0.525 lies in every interval.
  EXPECT_EQ(m.p_a1_in_hdi[0].successes, 10);
  // Only the five intervals starting at 0.51 enter the length statistics.
  ASSERT_TRUE(m.hdi_length[0].present);
  EXPECT_EQ(m.hdi_length[0].used, 5);
  EXPECT_NEAR(m.hdi_length[0].mean, 0.04 + 0.002, 1e-12);
  EXPECT_NEAR(m.mse.mean, 5.5e-4, 1e-15);
  EXPECT_GT(m.mse.mean_se, 0.0);

  const MeritReport again = meritFromReplications(recs, opt);
  EXPECT_EQ(again.p_success[0].bootstrap_se, m.p_success[0].bootstrap_se);
}

TEST(Merit, AllIntervalsExcluded) {
  std::vector<ReplicationRecord> recs(5, record(-6.0, 0.5, 0.56, 1e-4));
  MeritOptions opt;
  opt.bootstrap_resamples = 100;
  const MeritReport m = meritFromReplications(recs, opt);
  EXPECT_FALSE(m.hdi_length[0].present);
  EXPECT_EQ(m.hdi_length[0].used, 0);
  EXPECT_THROW(meritFromReplications({recs[0]}, opt), std::invalid_argument);
}
