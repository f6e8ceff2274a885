#pragma once

#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

namespace qdt {

/// p_n = 1 - (1 - p1)^n: independent single-photon detections.
double detectionProbability(double p1, int n);

/// 2AFC accuracy from detection probability, (1 + p) / 2.
double accuracyFromProbability(double p);

/// Ground-truth n-photon accuracies a_0..a_nmax.
///
/// A model built from p1 extends beyond its table with the binomial rule;
/// a model built from an explicit vector extends with its last entry.
class PerceptionModel {
 public:
  static PerceptionModel binomial(double p1, int n_max_model);
  /// Binomial model tabulated until the Poisson tail beyond n_max_model is
  /// below `tail` at intensity `nbar_max`.
  static PerceptionModel binomialCovering(double p1, double nbar_max, double tail = 1e-9);
  static PerceptionModel fromAccuracies(Eigen::VectorXd a);

  double accuracy(int n) const;
  const Eigen::VectorXd& accuracies() const { return a_; }
  int nMax() const { return static_cast<int>(a_.size()) - 1; }
  const std::optional<double>& p1() const { return p1_; }

  /// Accuracy averaged over a Poisson source at `nbar`, summed until the
  /// remaining Poisson mass is below 1e-15.
  double ensembleAccuracy(double nbar) const;
  Eigen::VectorXd ensembleAccuracies(const Eigen::VectorXd& nbar_grid) const;

 private:
  PerceptionModel(std::optional<double> p1, Eigen::VectorXd a) : p1_(p1), a_(std::move(a)) {}

  std::optional<double> p1_;
  Eigen::VectorXd a_;
};

/// Smallest n such that P(N > n) < tail for N ~ Poisson(nbar).
int poissonTailCutoff(double nbar, double tail);

/// A = 1 - sum_n (1 - a_n) rho_n over the truncated photon-number range.
template <typename DerivedA, typename DerivedR>
double ensembleAccuracy(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedR>& rho_row) {
  if (a.size() != rho_row.size()) throw std::invalid_argument("ensembleAccuracy: length mismatch");
  return 1.0 - ((1.0 - a.derived().array()) * rho_row.derived().array()).sum();
}

struct OpticsParams {
  double wavelength = 500e-9;   // m
  double n_eye = 1.337;
  double theta = 4e-2;          // rad
  double eye_diameter = 24e-3;  // m
  double rod_area = 5e-12;      // m^2 per rod
};

struct RetinalCoverage {
  double area = 0.0;  // m^2
  double rod_count = 0.0;
};

/// Illuminated retinal area for a beam focused on the retina (waist
/// lambda / (pi n theta)) or in Maxwellian view (radius d theta / n).
RetinalCoverage retinalCoverage(const OpticsParams& params, bool maxwellian);

}  // namespace qdt
