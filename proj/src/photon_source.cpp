#include "qdt/photon_source.hpp"

#include <algorithm>

namespace qdt {

void SourceConfig::validate() const {
  if (!(nbar_min > 0.0)) throw std::invalid_argument("nbar_min must be positive");
  if (!(nbar_min <= nbar_max)) throw std::invalid_argument("nbar_min must not exceed nbar_max");
  if (data_points < 1) throw std::invalid_argument("data_points must be at least 1");
  if (trials < 0) throw std::invalid_argument("trials must be non-negative");
  if (sigma_nbar.size() != data_points) {
    throw std::invalid_argument("sigma_nbar must have one entry per data point");
  }
  if ((sigma_nbar.array() < 0.0).any() || !sigma_nbar.allFinite()) {
    throw std::invalid_argument("sigma_nbar entries must be finite and non-negative");
  }
}

std::vector<std::string> SourceConfig::warnings() const {
  std::vector<std::string> out;
  if (data_points == 1 && nbar_max != nbar_min) {
    out.emplace_back("single data point: nbar_max is ignored, grid is [nbar_min]");
  }
  return out;
}

Eigen::VectorXd SourceConfig::intensityGrid() const {
  if (data_points == 1) return Eigen::VectorXd::Constant(1, nbar_min);
  return Eigen::VectorXd::LinSpaced(data_points, nbar_min, nbar_max);
}

SourceConfig SourceConfig::withUniformNoise(double nbar_min, double nbar_max, int data_points, int trials,
                                            double sigma) {
  SourceConfig c;
  c.nbar_min = nbar_min;
  c.nbar_max = nbar_max;
  c.data_points = data_points;
  c.trials = trials;
  c.sigma_nbar = Eigen::VectorXd::Constant(std::max(data_points, 0), sigma);
  c.validate();
  return c;
}

SourceConfig SourceConfig::withRelativeNoise(double nbar_min, double nbar_max, int data_points, int trials,
                                             double fraction) {
  SourceConfig c = withUniformNoise(nbar_min, nbar_max, data_points, trials, 0.0);
  c.sigma_nbar = fraction * c.intensityGrid();
  c.validate();
  return c;
}

RhoMatrix buildRho(const Eigen::VectorXd& nbar_grid, int n_max, bool augmented) {
  if (n_max < 1) throw std::invalid_argument("buildRho: n_max must be at least 1");
  const int cols = n_max + (augmented ? 2 : 1);
  RhoMatrix rho;
  rho.entries.resize(nbar_grid.size(), cols);
  for (Eigen::Index d = 0; d < nbar_grid.size(); ++d) {
    for (int n = 0; n < cols; ++n) rho.entries(d, n) = poissonPmf(nbar_grid(d), n);
  }
  rho.nbar_grid = nbar_grid;
  rho.n_max = n_max;
  rho.augmented = augmented;
  return rho;
}

RhoMatrix buildRho(const SourceConfig& config, int n_max, bool augmented) {
  config.validate();
  return buildRho(config.intensityGrid(), n_max, augmented);
}

double sampleNoisyIntensity(double nbar_nominal, double sigma, Rng& rng, double floor) {
  if (sigma < 0.0) throw std::invalid_argument("sampleNoisyIntensity: sigma must be non-negative");
  if (sigma == 0.0) return nbar_nominal;
  return std::max(floor, nbar_nominal + sigma * rng.normal());
}

}  // namespace qdt
