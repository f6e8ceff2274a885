#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qdt/random.hpp"

namespace qdt {

/// Intensity floor applied after adding source noise (photons/pulse).
inline constexpr double kIntensityFloor = 1e-6;

/// Light-source settings for one experiment: an equidistant grid of mean
/// photon numbers, trials per grid point and per-point intensity noise.
struct SourceConfig {
  double nbar_min = 1.0;
  double nbar_max = 3.0;
  int data_points = 5;
  int trials = 1000;
  /// Standard deviation of the per-trial intensity noise, one entry per data point.
  Eigen::VectorXd sigma_nbar = Eigen::VectorXd::Zero(5);

  /// Throws std::invalid_argument if an invariant is violated.
  void validate() const;
  /// Non-fatal remarks (e.g. nbar_max ignored for a single data point).
  std::vector<std::string> warnings() const;
  /// N_d = nbar_min + d (nbar_max - nbar_min) / (D - 1); [nbar_min] when D = 1.
  Eigen::VectorXd intensityGrid() const;

  static SourceConfig withUniformNoise(double nbar_min, double nbar_max, int data_points, int trials,
                                       double sigma = 0.0);
  /// Noise proportional to each nominal intensity: sigma_d = fraction * N_d.
  static SourceConfig withRelativeNoise(double nbar_min, double nbar_max, int data_points, int trials,
                                        double fraction);
};

/// Poisson photon-number probabilities per data point. Rows are data
/// points, columns photon numbers 0..n_max (0..n_max+1 when augmented).
struct RhoMatrix {
  Eigen::MatrixXd entries;
  Eigen::VectorXd nbar_grid;
  int n_max = 0;
  bool augmented = false;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

/// exp(-nbar) nbar^n / n!, evaluated in log space.
template <typename Scalar>
Scalar poissonPmf(const Scalar& nbar, int n) {
  using std::exp;
  using std::lgamma;
  using std::log;
  if (!(nbar > Scalar(0))) throw std::domain_error("poissonPmf: mean photon number must be positive");
  if (n < 0) throw std::domain_error("poissonPmf: photon number must be non-negative");
  return exp(-nbar + Scalar(n) * log(nbar) - lgamma(Scalar(n) + Scalar(1)));
}

/// Builds the D x (n_max + 1) probability matrix, or D x (n_max + 2) when
/// `augmented` adds the column for n_max + 1 photons.
RhoMatrix buildRho(const SourceConfig& config, int n_max, bool augmented);
RhoMatrix buildRho(const Eigen::VectorXd& nbar_grid, int n_max, bool augmented);

/// nbar_nominal + N(0, sigma), clamped below at `floor`. sigma = 0 returns
/// the nominal value without consuming randomness.
double sampleNoisyIntensity(double nbar_nominal, double sigma, Rng& rng, double floor = kIntensityFloor);

}  // namespace qdt
