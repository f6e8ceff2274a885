#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "qdt/perception_model.hpp"
#include "qdt/photon_source.hpp"
#include "qdt/random.hpp"

namespace qdt {

struct SimulationResult {
  SourceConfig config;
  PerceptionModel model;
  std::uint64_t seed = 0;
  /// Correct responses per data point.
  Eigen::VectorXi sigma;
  /// Optional diagnostics: photon_histogram[d][n] counts trials at data point d with n photons.
  std::vector<std::vector<long>> photon_histogram;
};

/// One 2AFC trial: noisy intensity, Poisson photon number, Bernoulli response
/// with accuracy a_n. Returns true for a correct response. The interval the
/// pulse appears in never enters: a_n depends on n only. The intensity
/// noise is drawn from `noise_rng` when given, else from `rng`.
bool runTrial(double nbar_nominal, double sigma_nbar, const PerceptionModel& model, Rng& rng,
              int* photons_out = nullptr, Rng* noise_rng = nullptr);

/// Simulates T trials at each of the D intensities. Data point d draws from
/// the stream (seed, kSimulation, d), so the result does not depend on `workers`.
SimulationResult runExperiment(const SourceConfig& config, const PerceptionModel& model, std::uint64_t seed,
                               bool record_histogram = false, int workers = 1);

}  // namespace qdt
