#include "qdt/prior_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace qdt {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logAddExp(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double m = std::max(x, y);
  return m + std::log1p(std::exp(-std::fabs(x - y)));
}

double sampleShape(const PriorSpec& spec, double scale, Rng& rng) {
  for (;;) {
    const double x = spec.hyper == ShapeHyperPrior::kShifted ? 1.0 + std::fabs(rng.normal(0.0, scale))
                                                              : std::fabs(rng.normal(1.0, scale));
    if (x > spec.shapeFloor()) return x;
  }
}

}  // namespace

double alphaPriorScale(int n_max) { return 0.5 + n_max / 2.0 - n_max * n_max / 35.0; }
double betaPriorScale(int n_max) { return 12.0 - n_max / 1.8 - n_max * n_max / 200.0; }

PriorSpec PriorSpec::forNmax(int n_max, double p_min, bool with_extension, ShapeHyperPrior hyper) {
  PriorSpec spec;
  spec.hyper = hyper;
  spec.n_max = n_max;
  spec.alpha_sd = alphaPriorScale(n_max);
  spec.beta_sd = betaPriorScale(n_max);
  spec.p_min = p_min;
  spec.with_extension = with_extension;
  spec.validate();
  return spec;
}

void PriorSpec::validate() const {
  if (n_max < 1 || n_max > kMaxSupportedNmax) {
    throw std::invalid_argument("PriorSpec: n_max must lie in [1, " + std::to_string(kMaxSupportedNmax) + "]");
  }
  if (!(alpha_sd > 0.0) || !(beta_sd > 0.0)) throw std::invalid_argument("PriorSpec: hyper-prior scales must be positive");
  if (!(p_min >= 0.0 && p_min < 1.0)) throw std::invalid_argument("PriorSpec: p_min must lie in [0, 1)");
  if (!(extension.a > 0.0 && extension.b > 0.0)) throw std::invalid_argument("PriorSpec: extension shape must be positive");
}

double PriorSpec::logShapePrior(double x, double scale) const {
  return hyper == ShapeHyperPrior::kShifted ? logShiftedHalfNormal(x, 1.0, scale) : logFoldedNormal(x, 1.0, scale);
}

PriorDraw samplePrior(const PriorSpec& spec, Rng& rng) {
  spec.validate();
  PriorDraw draw;
  draw.p_tilde.resize(spec.n_max + 1);
  draw.p_tilde(0) = 0.0;
  for (;;) {
    // Very small shapes underflow beta draws to exactly 0 or 1; such a set
    // is not representable as a strictly ordered one, so the whole draw
    // (shapes included) is repeated.
    draw.alpha = sampleShape(spec, spec.alpha_sd, rng);
    draw.beta = sampleShape(spec, spec.beta_sd, rng);
    for (int n = 1; n <= spec.n_max; ++n) draw.p_tilde(n) = rng.beta(draw.alpha, draw.beta);
    std::sort(draw.p_tilde.begin() + 1, draw.p_tilde.end());
    bool strict = true;
    for (int n = 0; n < spec.n_max && strict; ++n) strict = draw.p_tilde(n) < draw.p_tilde(n + 1);
    if (strict && draw.p_tilde(spec.n_max) < 1.0) break;
  }
  if (spec.with_extension) {
    draw.extension = spec.p_min + (1.0 - spec.p_min) * rng.beta(spec.extension.a, spec.extension.b);
  }
  return draw;
}

double logFoldedNormal(double x, double location, double scale) {
  if (!(x > 0.0) || !(scale > 0.0)) return kNegInf;
  const double z1 = (x - location) / scale;
  const double z2 = (x + location) / scale;
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(scale);
  return log_norm + logAddExp(-0.5 * z1 * z1, -0.5 * z2 * z2);
}

double logShiftedHalfNormal(double x, double location, double scale) {
  if (!(x > location) || !(scale > 0.0)) return kNegInf;
  const double z = (x - location) / scale;
  return 0.5 * std::log(2.0 / std::numbers::pi) - std::log(scale) - 0.5 * z * z;
}

double logBetaPdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  const double log_beta_fn = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn;
}

double logOrderedBetaDensity(std::span<const double> sorted, double a, double b) {
  double total = std::lgamma(static_cast<double>(sorted.size()) + 1.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && !(sorted[i - 1] < sorted[i])) return kNegInf;
    total += logBetaPdf(sorted[i], a, b);
    if (total == kNegInf) return kNegInf;
  }
  return total;
}

double logExtensionDensity(double value, double p_min, const BetaShape& shape) {
  const double width = 1.0 - p_min;
  if (!(width > 0.0)) return kNegInf;
  return logBetaPdf((value - p_min) / width, shape.a, shape.b) - std::log(width);
}

double logPriorDensity(const PriorDraw& draw, const PriorSpec& spec) {
  if (draw.p_tilde.size() != spec.n_max + 1 || draw.p_tilde(0) != 0.0) return kNegInf;
  double lp = spec.logShapePrior(draw.alpha, spec.alpha_sd) + spec.logShapePrior(draw.beta, spec.beta_sd);
  if (lp == kNegInf) return kNegInf;
  std::span<const double> ordered(draw.p_tilde.data() + 1, static_cast<std::size_t>(spec.n_max));
  if (!(draw.p_tilde(1) > 0.0)) return kNegInf;
  lp += logOrderedBetaDensity(ordered, draw.alpha, draw.beta);
  if (spec.with_extension) {
    if (!draw.extension) return kNegInf;
    lp += logExtensionDensity(*draw.extension, spec.p_min, spec.extension);
  }
  return lp;
}

}  // namespace qdt
