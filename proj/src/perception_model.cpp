#include "qdt/perception_model.hpp"

#include <cmath>
#include <numbers>

#include "qdt/photon_source.hpp"

namespace qdt {

double detectionProbability(double p1, int n) {
  if (!(p1 >= 0.0 && p1 <= 1.0)) throw std::domain_error("detectionProbability: p1 outside [0, 1]");
  if (n < 0) throw std::domain_error("detectionProbability: negative photon number");
  return 1.0 - std::pow(1.0 - p1, n);
}

double accuracyFromProbability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("accuracyFromProbability: p outside [0, 1]");
  return 0.5 * (1.0 + p);
}

PerceptionModel PerceptionModel::binomial(double p1, int n_max_model) {
  if (n_max_model < 0) throw std::invalid_argument("PerceptionModel: n_max_model must be >= 0");
  Eigen::VectorXd a(n_max_model + 1);
  for (int n = 0; n <= n_max_model; ++n) a(n) = accuracyFromProbability(detectionProbability(p1, n));
  return PerceptionModel(p1, std::move(a));
}

PerceptionModel PerceptionModel::binomialCovering(double p1, double nbar_max, double tail) {
  return binomial(p1, poissonTailCutoff(nbar_max, tail));
}

PerceptionModel PerceptionModel::fromAccuracies(Eigen::VectorXd a) {
  if (a.size() < 1) throw std::invalid_argument("PerceptionModel: empty accuracy vector");
  if (a(0) != 0.5) throw std::invalid_argument("PerceptionModel: a_0 must equal 0.5");
  for (Eigen::Index n = 0; n < a.size(); ++n) {
    if (!(a(n) >= 0.5 && a(n) <= 1.0)) throw std::invalid_argument("PerceptionModel: accuracy outside [0.5, 1]");
    if (n > 0 && a(n) < a(n - 1)) throw std::invalid_argument("PerceptionModel: accuracies must be non-decreasing");
  }
  return PerceptionModel(std::nullopt, std::move(a));
}

double PerceptionModel::accuracy(int n) const {
  if (n < 0) throw std::domain_error("PerceptionModel::accuracy: negative photon number");
  if (n < a_.size()) return a_(n);
  if (p1_) return accuracyFromProbability(detectionProbability(*p1_, n));
  return a_(a_.size() - 1);
}

double PerceptionModel::ensembleAccuracy(double nbar) const {
  const int n_top = std::max(poissonTailCutoff(nbar, 1e-15), nMax());
  double miss = 0.0;
  for (int n = 0; n <= n_top; ++n) miss += (1.0 - accuracy(n)) * poissonPmf(nbar, n);
  return 1.0 - miss;
}

Eigen::VectorXd PerceptionModel::ensembleAccuracies(const Eigen::VectorXd& nbar_grid) const {
  Eigen::VectorXd out(nbar_grid.size());
  for (Eigen::Index d = 0; d < nbar_grid.size(); ++d) out(d) = ensembleAccuracy(nbar_grid(d));
  return out;
}

int poissonTailCutoff(double nbar, double tail) {
  double cdf = 0.0;
  int n = 0;
  for (;; ++n) {
    cdf += poissonPmf(nbar, n);
    if (1.0 - cdf < tail || n > 10000) return n;
  }
}

RetinalCoverage retinalCoverage(const OpticsParams& p, bool maxwellian) {
  if (!(p.wavelength > 0 && p.n_eye > 0 && p.theta > 0 && p.eye_diameter > 0 && p.rod_area > 0)) {
    throw std::invalid_argument("retinalCoverage: optics parameters must be positive");
  }
  constexpr double pi = std::numbers::pi;
  double area;
  if (maxwellian) {
    const double radius = p.eye_diameter * p.theta / p.n_eye;
    area = pi * radius * radius;
  } else {
    const double waist = p.wavelength / (pi * p.n_eye * p.theta);
    area = pi * waist * waist;
  }
  return {area, area / p.rod_area};
}

}  // namespace qdt
