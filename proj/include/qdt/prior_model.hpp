#pragma once

#include <optional>
#include <span>

#include <Eigen/Dense>

#include "qdt/random.hpp"

namespace qdt {

/// Largest photon cutoff for which both hyper-prior scales stay positive
/// with margin; detection fails beyond it.
inline constexpr int kMaxSupportedNmax = 17;

/// 1/2 + n/2 - n^2/35
double alphaPriorScale(int n_max);
/// 12 - n/1.8 - n^2/200
double betaPriorScale(int n_max);

struct BetaShape {
  double a = 1.0;
  double b = 1.0;
};

/// Reading of the halfnorm(1, s) hyper-prior on the beta shapes.
///   kShifted: x = 1 + |N(0, s)|, density 2 phi((x - 1)/s) / s on x > 1
///             (half-normal with location 1).
///   kFolded:  |N(1, s)|, density [phi((x - 1)/s) + phi((x + 1)/s)] / s on x > 0.
/// Only the shifted form puts the mode of the first accuracy strictly above
/// 1/2; see README.
enum class ShapeHyperPrior { kShifted, kFolded };

/// Ordered beta prior over detection probabilities.
struct PriorSpec {
  int n_max = 4;
  double alpha_sd = 0.0;
  double beta_sd = 0.0;
  ShapeHyperPrior hyper = ShapeHyperPrior::kShifted;
  /// Lower end of the support of the extension coordinate p_{n_max+1}.
  double p_min = 0.0;
  BetaShape extension{2.5, 0.5};
  bool with_extension = true;

  /// Scales from the n_max-dependent formulas.
  static PriorSpec forNmax(int n_max, double p_min = 0.0, bool with_extension = true,
                           ShapeHyperPrior hyper = ShapeHyperPrior::kShifted);
  void validate() const;
  /// Lower end of the shape support: 1 for kShifted, 0 for kFolded.
  double shapeFloor() const { return hyper == ShapeHyperPrior::kShifted ? 1.0 : 0.0; }
  double logShapePrior(double x, double scale) const;
};

struct PriorDraw {
  double alpha = 1.0;
  double beta = 1.0;
  /// [0, p_1, ..., p_nmax], strictly increasing.
  Eigen::VectorXd p_tilde;
  /// p_{n_max+1} in [p_min, 1] when the spec carries an extension.
  std::optional<double> extension;

  /// (1 + p) / 2 for the ordered part, so a_tilde(0) == 0.5 exactly.
  Eigen::VectorXd aTilde() const { return (1.0 + p_tilde.array()) * 0.5; }
};

/// Ancestral draw: alpha, beta from the shape hyper-priors, n_max iid
/// beta(alpha, beta) values sorted and prefixed with 0, then the extension
/// p_min + (1 - p_min) x with x ~ beta(extension). A set with a tie, a zero
/// or a one (only possible through floating-point underflow at very small
/// shapes) is redrawn together with alpha and beta.
PriorDraw samplePrior(const PriorSpec& spec, Rng& rng);

/// Joint log density of a draw: hyper-prior terms for alpha and beta, the
/// order-statistics density n! prod beta_pdf(p_n), and the rescaled beta term
/// for the extension. Returns -inf outside the support.
double logPriorDensity(const PriorDraw& draw, const PriorSpec& spec);

double logFoldedNormal(double x, double location, double scale);
/// Half-normal with location: 2 phi((x - location)/scale) / scale for x > location.
double logShiftedHalfNormal(double x, double location, double scale);
double logBetaPdf(double x, double a, double b);
/// log(n!) + sum log beta_pdf(p_i; a, b) for a strictly increasing p in (0, 1);
/// -inf when the ordering or support is violated.
double logOrderedBetaDensity(std::span<const double> sorted, double a, double b);
/// Density of p_min + (1 - p_min) x, x ~ beta(shape).
double logExtensionDensity(double value, double p_min, const BetaShape& shape);

}  // namespace qdt
