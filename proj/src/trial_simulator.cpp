#include "qdt/trial_simulator.hpp"

#include "qdt/parallel.hpp"

namespace qdt {

bool runTrial(double nbar_nominal, double sigma_nbar, const PerceptionModel& model, Rng& rng, int* photons_out,
              Rng* noise_rng) {
  const double nbar = sampleNoisyIntensity(nbar_nominal, sigma_nbar, noise_rng ? *noise_rng : rng);
  const int n = rng.poisson(nbar);
  if (photons_out) *photons_out = n;
  return rng.bernoulli(model.accuracy(n));
}

SimulationResult runExperiment(const SourceConfig& config, const PerceptionModel& model, std::uint64_t seed,
                               bool record_histogram, int workers) {
  config.validate();
  const Eigen::VectorXd grid = config.intensityGrid();
  const auto D = static_cast<std::size_t>(config.data_points);

  SimulationResult result{config, model, seed, Eigen::VectorXi::Zero(config.data_points), {}};
  if (record_histogram) result.photon_histogram.assign(D, {});

  parallelFor(D, workers, [&](std::size_t d) {
    // Separate noise stream: runs differing only in sigma share photon
    // numbers and responses wherever the intensity change allows.
    Rng rng = makeRng(seed, Stream::kSimulation, {d});
    Rng noise = makeRng(seed, Stream::kSimulation, {d, 1});
    int correct = 0;
    for (int t = 0; t < config.trials; ++t) {
      int n = 0;
      if (runTrial(grid(d), config.sigma_nbar(d), model, rng, &n, &noise)) ++correct;
      if (record_histogram) {
        auto& hist = result.photon_histogram[d];
        if (static_cast<std::size_t>(n) >= hist.size()) hist.resize(n + 1, 0);
        ++hist[n];
      }
    }
    result.sigma(d) = correct;
  });
  return result;
}

}  // namespace qdt
