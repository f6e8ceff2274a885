#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qdt/photon_source.hpp"
#include "qdt/prior_model.hpp"

namespace qdt {

/// Correct-response counts per data point together with the trial count.
struct SigmaArray {
  Eigen::VectorXi counts;
  int trials = 0;

  Eigen::Index size() const { return counts.size(); }
  Eigen::VectorXd observedAccuracy() const { return counts.cast<double>() / static_cast<double>(trials); }
};

struct McmcConfig {
  int n_chains = 3;
  int n_iter = 15000;
  int n_warmup = 2500;
  int n_thin = 3;
  int n_mult = 7;

  /// Robbins-Monro step-size adaptation toward this acceptance rate during
  /// warmup; the step sizes are frozen afterwards.
  double target_acceptance = 0.44;
  /// Adaptation gain decays as iteration^-adapt_decay.
  double adapt_decay = 0.6;
  double initial_log_step = 0.0;
  double rhat_threshold = 1.05;

  /// Replace the likelihood by a constant (the sampler then targets the prior).
  bool flat_likelihood = false;
  int workers = 1;

  /// n_chains (n_iter - n_warmup) / n_thin.
  int samplesPerMultiplex() const;
  void validate() const;

  static McmcConfig lowIterations() {
    McmcConfig c;
    c.n_iter = 5000;
    return c;
  }
  static McmcConfig highIterations() { return McmcConfig{}; }
};

/// Column layout shared by every sample matrix: alpha, beta, p_1..p_nmax,
/// then the extension coordinate p_{nmax+1} when present.
struct ParameterLayout {
  int n_max = 0;
  bool extension = false;

  int cols() const { return 2 + n_max + (extension ? 1 : 0); }
  static constexpr int alpha() { return 0; }
  static constexpr int beta() { return 1; }
  /// Column of p_n for n in [1, n_max].
  int p(int n) const { return 1 + n; }
  int ext() const { return 2 + n_max; }
  std::vector<std::string> names() const;
};

struct MultiplexChains {
  /// Retained posterior samples (samplesPerMultiplex rows, layout columns).
  Eigen::MatrixXd posterior;
  Eigen::VectorXi chain_id;
  Eigen::VectorXi iteration;
  /// Independent draws from the prior, same shape as `posterior`.
  Eigen::MatrixXd prior;
  /// Split R-hat and effective sample size per column.
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess;
  /// Post-warmup random-walk acceptance rate per column.
  Eigen::VectorXd acceptance;
};

struct ChainSet {
  ParameterLayout layout;
  PriorSpec spec;
  McmcConfig mcmc;
  std::uint64_t seed = 0;
  std::vector<MultiplexChains> multiplexes;

  double maxRhat() const;
  bool converged() const { return maxRhat() <= mcmc.rhat_threshold; }
};

/// Binomial log likelihood of the counts given accuracies a_tilde (one per
/// column of rho). The binomial coefficients are included only when asked;
/// the sampler drops them as a parameter-free constant.
/// Returns -inf if any reconstructed accuracy leaves (0, 1).
double logLikelihood(const SigmaArray& sigma, const RhoMatrix& rho, const Eigen::VectorXd& a_tilde,
                     bool include_binomial_coefficient = true);

/// A_tilde = 1 - rho (1 - a_tilde).
Eigen::VectorXd reconstructAccuracies(const RhoMatrix& rho, const Eigen::VectorXd& a_tilde);

/// Samples the posterior over the ordered-beta prior space. Runs
/// mcmc.n_mult independent multiplexes of mcmc.n_chains chains each; every
/// multiplex also carries an equally long set of exact prior draws.
///
/// rho must be augmented (n_max + 2 columns) when spec.with_extension.
ChainSet samplePosterior(const SigmaArray& sigma, const RhoMatrix& rho, const PriorSpec& spec,
                         const McmcConfig& mcmc, std::uint64_t seed);

enum class Side { kPrior, kPosterior };

/// Concatenates every multiplex (multiplex-major) into one sample matrix.
Eigen::MatrixXd squeeze(const ChainSet& chains, Side side = Side::kPosterior);
/// One column of the squeezed matrix.
Eigen::VectorXd squeezeColumn(const ChainSet& chains, int column, Side side = Side::kPosterior);
/// The per-multiplex chains of one column.
std::vector<Eigen::VectorXd> multiplexColumn(const ChainSet& chains, int column, Side side);

/// Accuracy-scale samples: column n holds a_tilde_n = (1 + p_n) / 2 for
/// n = 0..n_max (column 0 is the constant 0.5).
Eigen::MatrixXd accuracySamples(const ChainSet& chains, Side side = Side::kPosterior);
/// Reconstructed per-data-point accuracies for every squeezed posterior sample.
Eigen::MatrixXd reconstructedAccuracySamples(const ChainSet& chains, const RhoMatrix& rho);

/// Split R-hat over a set of chains of equal length.
double splitRhat(const std::vector<Eigen::VectorXd>& chains);
/// Effective sample size with Geyer's initial monotone sequence estimator.
double effectiveSampleSize(const std::vector<Eigen::VectorXd>& chains);

}  // namespace qdt
