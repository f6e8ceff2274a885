#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "qdt/photon_source.hpp"
#include "qdt/random.hpp"
#include "test_util.hpp"

using namespace qdt;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

// exp(-nbar) prod_{k<=n} nbar / k at 50 digits.
Big productPmf(double nbar, int n) {
  Big p = boost::multiprecision::exp(-Big(nbar));
  for (int k = 1; k <= n; ++k) p *= Big(nbar) / k;
  return p;
}

}  // namespace

TEST(PoissonPmf, ClosedFormValues) {
  EXPECT_NEAR(poissonPmf(1.0, 0), 0.36787944117144233, 1e-15);
  EXPECT_NEAR(poissonPmf(1.0, 4), 0.015328310048810097, 1e-15);
  // Probability of 4 photons at nbar = 1 quoted as 0.015 (15 of 1000 trials),
  // 5 photons about 3 in 1000 and 6 photons about 0.5 in 1000.
  EXPECT_NEAR(1000 * poissonPmf(1.0, 4), 15.0, 0.5);
  EXPECT_NEAR(1000 * poissonPmf(1.0, 5), 3.0, 0.1);
  EXPECT_NEAR(1000 * poissonPmf(1.0, 6), 0.5, 0.02);
}

TEST(PoissonPmf, MatchesProductOracle) {
  EXPECT_NEAR(poissonPmf(2.5, 7), 0.0099406165015688451, 1e-13 * 0.0099406165015688451);
  EXPECT_NEAR(poissonPmf(2.5, 7) / productPmf(2.5, 7).convert_to<double>(), 1.0, 1e-13);
}

TEST(PoissonPmf, ArbitraryPrecisionAgreement) {
  double worst = 0.0;
  for (double nbar : {0.01, 0.1, 0.5, 1.0, 2.5, 3.7, 7.0, 10.0}) {
    for (int n = 0; n <= 50; ++n) {
      const Big exact = productPmf(nbar, n);
      const double rel = Big(boost::multiprecision::abs((Big(poissonPmf(nbar, n)) - exact) / exact)).convert_to<double>();
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(PoissonPmf, StableUpTo200Photons) {
  for (int n = 0; n <= 200; ++n) {
    const double p = poissonPmf(50.0, n);
    ASSERT_TRUE(std::isfinite(p));
    ASSERT_GE(p, 0.0);
  }
  EXPECT_NEAR(poissonPmf(150.0, 200) / productPmf(150.0, 200).convert_to<double>(), 1.0, 1e-11);
}

TEST(PoissonPmf, DomainErrors) {
  EXPECT_THROW(poissonPmf(0.0, 1), std::domain_error);
  EXPECT_THROW(poissonPmf(-1.0, 1), std::domain_error);
  EXPECT_THROW(poissonPmf(1.0, -1), std::domain_error);
}

TEST(SourceConfig, EquidistantGrid) {
  const auto c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  const Eigen::VectorXd g = c.intensityGrid();
  ASSERT_EQ(g.size(), 5);
  for (int d = 0; d < 5; ++d) EXPECT_DOUBLE_EQ(g(d), 1.0 + 0.5 * d);
  EXPECT_TRUE(c.warnings().empty());
}

TEST(SourceConfig, SinglePointGridIgnoresMaximum) {
  const auto c = SourceConfig::withUniformNoise(1.0, 5.0, 1, 5000);
  const Eigen::VectorXd g = c.intensityGrid();
  ASSERT_EQ(g.size(), 1);
  EXPECT_DOUBLE_EQ(g(0), 1.0);
  EXPECT_EQ(c.warnings().size(), 1u);
}

TEST(SourceConfig, RelativeNoiseScalesWithIntensity) {
  const auto c = SourceConfig::withRelativeNoise(1.0, 3.0, 3, 100, 0.05);
  EXPECT_DOUBLE_EQ(c.sigma_nbar(0), 0.05);
  EXPECT_DOUBLE_EQ(c.sigma_nbar(2), 0.15);
}

TEST(SourceConfig, InvalidConfigsThrow) {
  auto c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  c.nbar_min = 4.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  c.data_points = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  c.sigma_nbar = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  c.sigma_nbar(1) = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  c.nbar_min = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(BuildRho, SinglePointRow) {
  const auto c = SourceConfig::withUniformNoise(1.0, 1.0, 1, 10);
  const RhoMatrix rho = buildRho(c, 3, false);
  ASSERT_EQ(rho.rows(), 1);
  ASSERT_EQ(rho.cols(), 4);
  const double expected[] = {0.36787944117144233, 0.36787944117144233, 0.18393972058572117, 0.061313240195240384};
  for (int n = 0; n < 4; ++n) EXPECT_NEAR(rho.entries(0, n), expected[n], 1e-15);
}

TEST(BuildRho, AugmentedShapeAndRowSums) {
  const auto c = SourceConfig::withUniformNoise(1.0, 3.0, 5, 1000);
  const RhoMatrix rho = buildRho(c, 6, true);
  EXPECT_EQ(rho.cols(), 8);
  EXPECT_TRUE(rho.augmented);
  const Eigen::VectorXd grid = c.intensityGrid();
  for (int d = 0; d < 5; ++d) {
    // Summation oracle for the Poisson CDF at n_max + 1.
    double cdf = 0.0;
    for (int n = 0; n <= 7; ++n) cdf += productPmf(grid(d), n).convert_to<double>();
    EXPECT_NEAR(rho.entries.row(d).sum(), cdf, 1e-14);
    EXPECT_LE(rho.entries.row(d).sum(), 1.0);
    EXPECT_TRUE((rho.entries.row(d).array() >= 0.0).all());
  }
}

TEST(BuildRho, ResidualMassAtLowIntensity) {
  const auto c = SourceConfig::withUniformNoise(1.0, 1.0, 1, 1000);
  // Mass beyond 5 photons at nbar = 1 is 5.94e-4, beyond 6 photons 8.32e-5.
  EXPECT_NEAR(1.0 - buildRho(c, 5, false).entries.sum(), 5.9418481758169300e-4, 1e-15);
  EXPECT_NEAR(1.0 - buildRho(c, 6, false).entries.sum(), 8.3241149288023108e-5, 1e-15);
}

TEST(NoisyIntensity, ZeroSigmaIsExactAndConsumesNothing) {
  Rng a(9), b(9);
  EXPECT_EQ(sampleNoisyIntensity(1.7, 0.0, a), 1.7);
  EXPECT_EQ(a(), b());
}

TEST(NoisyIntensity, MeanWithinCltBound) {
  Rng rng(10);
  std::vector<double> xs(100000);
  for (auto& x : xs) x = sampleNoisyIntensity(1.0, 0.05, rng);
  EXPECT_NEAR(test::mean(xs), 1.0, 3.0 * 0.05 / std::sqrt(1e5));
}

TEST(NoisyIntensity, ClampedAtFloor) {
  Rng rng(11);
  for (int i = 0; i < 100000; ++i) ASSERT_GE(sampleNoisyIntensity(0.01, 0.1, rng), kIntensityFloor);
}

TEST(NoisyIntensity, PhotonHistogramInsensitiveToFivePercentNoise) {
  // 10^6 noisy draws at nbar = 2 with sigma = 0.1 against the noiseless pmf.
  Rng rng(12);
  std::vector<double> counts(40, 0.0);
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const int n = rng.poisson(sampleNoisyIntensity(2.0, 0.1, rng));
    if (n < 40) counts[n] += 1.0;
  }
  double tv = 0.0;
  for (int n = 0; n < 40; ++n) tv += std::fabs(counts[n] / draws - poissonPmf(2.0, n));
  EXPECT_LT(0.5 * tv, 0.01);
}
