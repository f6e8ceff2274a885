#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qdt {

struct Interval {
  double low = 0.0;
  double high = 0.0;
  double length() const { return high - low; }
  bool contains(double x) const { return low <= x && x <= high; }
};

/// Shortest interval spanning ceil(mass * n) consecutive sorted samples.
/// Requires at least 100 samples and 0 < mass < 1.
Interval hdi(std::span<const double> chain, double mass);

/// Silverman's rule, 0.9 min(sd, IQR / 1.34) n^(-1/5). Zero for a constant chain.
double silvermanBandwidth(std::span<const double> chain);

/// Gaussian kernel density estimate at x. With `reflect_at`, samples are
/// mirrored about that lower boundary (x must then be >= the boundary).
double kdeDensity(std::span<const double> chain, double x, double bandwidth,
                  std::optional<double> reflect_at = std::nullopt);

/// Argmax of the kernel density estimate on a 512-point grid spanning the
/// sample range. A constant chain returns its value.
double densityMode(std::span<const double> chain, std::optional<double> reflect_at = std::nullopt,
                   int grid_points = 512);

/// 10 log10(posterior density / prior density) at `point`, both estimated
/// by reflection KDE with the boundary at `point`. Throws if the prior
/// density estimate vanishes; returns -inf if only the posterior one does.
double savageDickey(std::span<const double> prior_a1, std::span<const double> posterior_a1, double point = 0.5);

/// (1 / n_max) sum_{n=1..n_max} (mode_n - a_n)^2; both vectors cover n = 1..n_max.
double mseAccuracies(const Eigen::VectorXd& modes, const Eigen::VectorXd& truth);

/// Per-parameter posterior summary.
struct ParameterSummary {
  std::string name;
  double mode = 0.0;
  double mean = 0.0;
  double median = 0.0;
  std::vector<Interval> hdis;  // one per requested mass
};

struct PosteriorSummary {
  std::vector<double> hdi_masses;
  std::vector<ParameterSummary> parameters;

  const ParameterSummary& at(const std::string& name) const;
};

/// Summarises each column of `samples`. `reflect_at` gives the per-column
/// lower boundary used by the mode estimator (empty optional: none).
PosteriorSummary summarize(const Eigen::MatrixXd& samples, const std::vector<std::string>& names,
                           const std::vector<double>& hdi_masses,
                           const std::vector<std::optional<double>>& reflect_at = {});

// ---------------------------------------------------------------------------
// Figures of merit over replicated experiments.

struct ReplicationRecord {
  double r_sd = 0.0;
  double mode_a1 = 0.0;
  /// HDIs of a_tilde_1, aligned with MeritOptions::hdi_masses.
  std::vector<Interval> hdi_a1;
  double mse = 0.0;
  int n_max = 0;
  bool converged = true;
};

struct MeritOptions {
  std::vector<double> r_sd_thresholds{-5.0, -10.0};
  std::vector<double> hdi_masses{0.95};
  /// HDIs whose lower end is at or below this value are left out of the length statistics.
  double hdi_exclusion = 0.501;
  double truth_a1 = 0.525;
  int bootstrap_resamples = 10000;
  double credible_mass = 0.95;
  /// Use beta(k + 1, n + 1) instead of the conjugate beta(k + 1, n - k + 1).
  bool beta_trials_plus_one = false;
  std::uint64_t seed = 0;
};

/// Success probability with its beta posterior under a flat prior.
struct ProbabilityEstimate {
  int successes = 0;
  int trials = 0;
  double post_a = 1.0;
  double post_b = 1.0;
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  double bootstrap_se = 0.0;
};

struct MeanSdEstimate {
  bool present = false;
  int used = 0;
  double mean = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;  // bootstrap
  double sd_se = 0.0;    // bootstrap
};

struct MeritReport {
  int replications = 0;
  std::vector<double> r_sd_thresholds;
  std::vector<ProbabilityEstimate> p_success;  // per threshold
  std::vector<double> hdi_masses;
  std::vector<ProbabilityEstimate> p_a1_in_hdi;  // per mass
  std::vector<MeanSdEstimate> hdi_length;        // per mass
  MeanSdEstimate mse;
  int bootstrap_resamples = 0;
  std::uint64_t bootstrap_seed = 0;
};

ProbabilityEstimate betaPosteriorEstimate(int successes, int trials, double credible_mass, bool trials_plus_one);

MeritReport meritFromReplications(const std::vector<ReplicationRecord>& records, const MeritOptions& options);

}  // namespace qdt
