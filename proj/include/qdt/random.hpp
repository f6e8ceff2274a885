#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace qdt {

/// Stream tags used as the first component of every derived seed path.
/// Changing a value changes every downstream number, so these are frozen.
enum class Stream : std::uint64_t {
  kSimulation = 1,   // (seed, kSimulation, data_point)
  kPosterior = 2,    // (seed, kPosterior, multiplex, chain)
  kPrior = 3,        // (seed, kPrior, multiplex)
  kCalibration = 4,  // (seed, kCalibration, replication)
  kBootstrap = 5,    // (seed, kBootstrap)
  kSweep = 6,        // (seed, kSweep, cell, replication)
  kDetection = 7,    // (seed, kDetection, attempt)
};

/// Derives a child seed from a parent seed and an index path with the
/// SplitMix64 finalizer. Distinct paths give statistically independent seeds.
std::uint64_t splitSeed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

inline std::uint64_t splitSeed(std::uint64_t seed, Stream stream,
                               std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t s = splitSeed(seed, {static_cast<std::uint64_t>(stream)});
  return path.size() == 0 ? s : splitSeed(s, path);
}

/// xoshiro256** generator with the samplers the simulator and the MCMC
/// engine need. All samplers are implemented here (not via <random>
/// distributions) so sequences are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Log of a Gamma(shape, 1) variate; stays finite for very small shapes.
  double logGamma(double shape);
  double gamma(double shape);
  double beta(double a, double b);
  /// Poisson variate; sequential inversion for mean <= 10, PTRS above.
  int poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  int poissonPtrs(double mean);

  std::array<std::uint64_t, 4> s_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

inline Rng makeRng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(splitSeed(seed, stream, path));
}

}  // namespace qdt
