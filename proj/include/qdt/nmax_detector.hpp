#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qdt/inference.hpp"
#include "qdt/photon_source.hpp"
#include "qdt/prior_model.hpp"

namespace qdt {

/// Element round(q L) (1-based, clamped to [1, L]) of the sorted chain.
double inverseCdf(std::span<const double> chain, double q);

/// inverseCdf over an already sorted chain.
double inverseCdfSorted(std::span<const double> sorted, double q);

/// inverseCdf(prior, q) - inverseCdf(posterior, q).
double deltaStatistic(std::span<const double> prior, std::span<const double> posterior, double q);

/// q = 0.01, 0.02, ..., 0.99.
Eigen::VectorXd defaultQuantileGrid();

/// C(q) = mean / sd over all N_mult^2 pairs (i, j) of
/// Delta_ij = F^-1_prior,i(q) - F^-1_post,j(q). The sd is the sample sd.
/// 0 when both mean and sd vanish; +-inf when only the sd does.
double cStatistic(const std::vector<Eigen::VectorXd>& prior_chains,
                  const std::vector<Eigen::VectorXd>& posterior_chains, double q);

struct CProfile {
  Eigen::VectorXd q;
  Eigen::VectorXd c;
  double max_abs_c = 0.0;
  double q_at_max = 0.0;
};

/// C over a quantile grid. Chains are sorted once.
CProfile cProfile(const std::vector<Eigen::VectorXd>& prior_chains,
                  const std::vector<Eigen::VectorXd>& posterior_chains,
                  const Eigen::VectorXd& q_grid = defaultQuantileGrid());

/// Null distribution of max |C| when both chain sets are iid draws from the
/// extension prior. The statistic is invariant under the affine map to
/// [p_min, 1], so only the shape matters.
struct CutoffCalibration {
  int n_mult = 7;
  int n_mc = 12500;
  int replications = 2000;
  BetaShape shape{2.5, 0.5};
  double level = 0.975;
  std::uint64_t seed = 0;
  Eigen::VectorXd q_grid = defaultQuantileGrid();

  /// Sorted null draws of max |C| and their `level` quantile.
  std::vector<double> null_max_abs_c;
  double cutoff = 0.0;

  /// Identifies the settings (not the result) for caching.
  std::string key() const;
};

/// Fills null_max_abs_c and cutoff of `settings`. Needs at least 500
/// replications and n_mult >= 2.
CutoffCalibration calibrateCutoff(CutoffCalibration settings, int workers = 1);

struct DetectionOptions {
  McmcConfig low = McmcConfig::lowIterations();
  McmcConfig high = McmcConfig::highIterations();
  double cutoff = 1.8;
  /// Starting n_max; 0 picks round(nbar_max) + 1.
  int start_n_max = 0;
  int hard_max = kMaxSupportedNmax;
  BetaShape extension{2.5, 0.5};
  Eigen::VectorXd q_grid = defaultQuantileGrid();
  /// On rejection set p_min = mode(a_tilde_nmax) instead of 2 mode(a_tilde_nmax) - 1.
  bool pmin_at_mode = false;
  ShapeHyperPrior hyper = ShapeHyperPrior::kShifted;
};

struct DetectionStep {
  int n_max = 0;
  double p_min = 0.0;
  int stage = 1;
  int n_iter = 0;
  double max_abs_c = 0.0;
  double q_at_max = 0.0;
  double max_rhat = 0.0;
  bool accepted = false;
};

struct NmaxResult {
  bool success = false;
  int n_max = 0;
  double p_min = 0.0;
  std::string failure;
  std::vector<DetectionStep> trace;
  /// Stage-2 chains at the accepted n_max (empty on failure).
  ChainSet chains;
};

/// Two-stage search for the smallest n_max whose extension coordinate is
/// left at its prior. Stage 1 uses the short configuration; an accepted
/// stage-1 n_max is re-checked with the long one. A rejection at either
/// stage sets p_min from the current chains and moves to n_max + 1 at
/// stage 1. Fails once n_max would exceed the hard bound.
NmaxResult detectNmax(const SigmaArray& sigma, const SourceConfig& config, const DetectionOptions& options,
                      std::uint64_t seed);

}  // namespace qdt
