#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qdt/analysis.hpp"
#include "qdt/inference.hpp"
#include "qdt/nmax_detector.hpp"
#include "qdt/perception_model.hpp"
#include "qdt/photon_source.hpp"
#include "qdt/trial_simulator.hpp"

namespace qdt {

inline constexpr const char* kToolVersion = "1.0.0";

struct ReconstructionOptions {
  DetectionOptions detection;
  std::vector<double> hdi_masses{0.95};
};

/// Outcome of simulate-free reconstruction of one Sigma array.
struct Reconstruction {
  NmaxResult detection;
  /// alpha, beta, a_tilde_1..a_tilde_nmax, A_tilde_1..A_tilde_D (empty on failure).
  PosteriorSummary summary;
  Eigen::VectorXd nbar_grid;
  Eigen::VectorXd observed_A;  // Sigma_d / T
  Eigen::VectorXd reconstructed_A;  // modes of A_tilde_d
  std::optional<Eigen::VectorXd> model_A;
  double r_sd = 0.0;
  std::optional<double> mse;
  double max_rhat = 0.0;
  bool converged = false;
  /// Flat likelihood and the first proposed n_max accepted at both stages.
  bool prior_recovery = false;

  bool ok() const { return detection.success; }
};

/// n_max detection followed by the posterior summary of the accepted chains.
/// With `truth`, the model ensemble accuracies and the MSE are filled in.
Reconstruction reconstruct(const SigmaArray& sigma, const SourceConfig& config, const ReconstructionOptions& options,
                           std::uint64_t seed, const PerceptionModel* truth = nullptr);

/// Record fed into the merit statistics.
ReplicationRecord replicationRecord(const Reconstruction& r);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  int index = 0;
  double nbar_min = 1.0;
  double nbar_max = 3.0;
  int data_points = 5;
  int trials = 1000;
  double p1 = 0.05;
  double sigma_nbar = 0.0;  // absolute, photons/pulse
  double sigma_rel = 0.0;   // fraction of each nominal intensity

  SourceConfig source() const;
  PerceptionModel model() const;
};

struct SweepGrid {
  std::vector<double> nbar_min{1.0};
  std::vector<double> nbar_max{3.0};
  std::vector<int> data_points{5};
  std::vector<int> trials{1000};
  std::vector<double> p1{0.05};
  std::vector<double> sigma_nbar{0.0};
  std::vector<double> sigma_rel{0.0};
  int replications = 30;
  std::vector<double> r_sd_thresholds{-5.0, -10.0};
  std::vector<double> hdi_masses{0.95};
  double hdi_exclusion = 0.501;

  void validate() const;
  /// Cartesian product, nbar_max varying fastest.
  std::vector<SweepCell> cells() const;
};

inline constexpr int kDeskReplications = 30;
inline constexpr int kFullScaleReplications = 100;

struct ReplicationOutcome {
  int replication = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  ReplicationRecord record;
};

struct CellResult {
  SweepCell cell;
  std::vector<ReplicationOutcome> replications;
  /// Present when at least two replications succeeded.
  std::optional<MeritReport> merit;

  int failures() const;
  std::vector<ReplicationRecord> records() const;
};

struct SweepOptions {
  ReconstructionOptions reconstruction;
  std::uint64_t seed = 0;
  int workers = 1;
  int bootstrap_resamples = 10000;
  bool beta_trials_plus_one = false;
  /// Cell checkpoints go to <out_dir>/cells; empty disables checkpointing.
  std::filesystem::path out_dir;
  std::function<void(const std::string&)> log;
};

/// Seed of replication `rep` of cell `cell`: split(seed, sweep, cell, rep).
std::uint64_t replicationSeed(std::uint64_t seed, int cell, int rep);

/// Merit statistics of one cell from its replication outcomes.
std::optional<MeritReport> cellMerit(const SweepGrid& grid, const SweepCell& cell,
                                     const std::vector<ReplicationOutcome>& reps, const SweepOptions& options);

/// Runs every cell (simulate -> reconstruct -> analyse per replication).
/// Completed cells found in the checkpoint directory are loaded instead of
/// recomputed; a failing replication is recorded and the sweep continues.
std::vector<CellResult> runSweep(const SweepGrid& grid, const SweepOptions& options);

}  // namespace qdt
