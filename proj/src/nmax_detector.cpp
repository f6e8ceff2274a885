#include "qdt/nmax_detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "qdt/analysis.hpp"
#include "qdt/parallel.hpp"
#include "qdt/random.hpp"

namespace qdt {
namespace {

std::vector<std::vector<double>> sortedChains(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<std::vector<double>> out;
  out.reserve(chains.size());
  for (const auto& c : chains) {
    if (c.size() == 0) throw std::invalid_argument("cStatistic: empty chain");
    std::vector<double> v(c.data(), c.data() + c.size());
    std::sort(v.begin(), v.end());
    out.push_back(std::move(v));
  }
  return out;
}

double cFromQuantiles(const std::vector<double>& prior_q, const std::vector<double>& post_q) {
  const std::size_t n = prior_q.size() * post_q.size();
  double mean = 0.0;
  for (double a : prior_q)
    for (double b : post_q) mean += a - b;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double a : prior_q)
    for (double b : post_q) ss += (a - b - mean) * (a - b - mean);
  const double sd = std::sqrt(ss / (static_cast<double>(n) - 1.0));
  if (sd == 0.0) {
    if (mean == 0.0) return 0.0;
    return mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return mean / sd;
}

CProfile profileOfSorted(const std::vector<std::vector<double>>& prior,
                         const std::vector<std::vector<double>>& post, const Eigen::VectorXd& q_grid) {
  CProfile p;
  p.q = q_grid;
  p.c.resize(q_grid.size());
  std::vector<double> pq(prior.size()), oq(post.size());
  for (Eigen::Index k = 0; k < q_grid.size(); ++k) {
    for (std::size_t i = 0; i < prior.size(); ++i) pq[i] = inverseCdfSorted(prior[i], q_grid(k));
    for (std::size_t j = 0; j < post.size(); ++j) oq[j] = inverseCdfSorted(post[j], q_grid(k));
    p.c(k) = cFromQuantiles(pq, oq);
    if (std::fabs(p.c(k)) > p.max_abs_c || k == 0) {
      p.max_abs_c = std::fabs(p.c(k));
      p.q_at_max = q_grid(k);
    }
  }
  return p;
}

void checkChainSets(const std::vector<Eigen::VectorXd>& prior, const std::vector<Eigen::VectorXd>& post) {
  if (prior.size() != post.size()) throw std::invalid_argument("cStatistic: prior and posterior chain counts differ");
  if (prior.size() < 2) throw std::invalid_argument("cStatistic: need at least two multiplexes");
}

}  // namespace

double inverseCdfSorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("inverseCdf: empty chain");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("inverseCdf: q must lie in (0, 1]");
  const auto L = static_cast<long>(sorted.size());
  const long idx = std::clamp(static_cast<long>(std::lround(q * static_cast<double>(L))), 1L, L);
  return sorted[static_cast<std::size_t>(idx - 1)];
}

double inverseCdf(std::span<const double> chain, double q) {
  std::vector<double> v(chain.begin(), chain.end());
  std::sort(v.begin(), v.end());
  return inverseCdfSorted(v, q);
}

double deltaStatistic(std::span<const double> prior, std::span<const double> posterior, double q) {
  return inverseCdf(prior, q) - inverseCdf(posterior, q);
}

Eigen::VectorXd defaultQuantileGrid() {
  Eigen::VectorXd q(99);
  for (int i = 0; i < 99; ++i) q(i) = (i + 1) / 100.0;
  return q;
}

double cStatistic(const std::vector<Eigen::VectorXd>& prior_chains,
                  const std::vector<Eigen::VectorXd>& posterior_chains, double q) {
  checkChainSets(prior_chains, posterior_chains);
  Eigen::VectorXd grid(1);
  grid(0) = q;
  return profileOfSorted(sortedChains(prior_chains), sortedChains(posterior_chains), grid).c(0);
}

CProfile cProfile(const std::vector<Eigen::VectorXd>& prior_chains,
                  const std::vector<Eigen::VectorXd>& posterior_chains, const Eigen::VectorXd& q_grid) {
  checkChainSets(prior_chains, posterior_chains);
  if (q_grid.size() == 0) throw std::invalid_argument("cProfile: empty quantile grid");
  return profileOfSorted(sortedChains(prior_chains), sortedChains(posterior_chains), q_grid);
}

std::string CutoffCalibration::key() const {
  // FNV-1a over the grid bytes keeps the key short.
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index i = 0; i < q_grid.size(); ++i) {
    const double v = q_grid(i);
    const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t b = 0; b < sizeof v; ++b) {
      h ^= bytes[b];
      h *= 1099511628211ULL;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "m%d_n%d_r%d_a%.6g_b%.6g_l%.6g_s%llu_q%016llx", n_mult, n_mc, replications, shape.a,
                shape.b, level, static_cast<unsigned long long>(seed), static_cast<unsigned long long>(h));
  return buf;
}

CutoffCalibration calibrateCutoff(CutoffCalibration s, int workers) {
  if (s.replications < 500) throw std::invalid_argument("calibrateCutoff: need at least 500 replications");
  if (s.n_mult < 2) throw std::invalid_argument("calibrateCutoff: n_mult must be at least 2");
  if (s.n_mc < 1) throw std::invalid_argument("calibrateCutoff: n_mc must be positive");
  if (!(s.level > 0.0 && s.level < 1.0)) throw std::invalid_argument("calibrateCutoff: level must lie in (0, 1)");
  if (!(s.shape.a > 0.0 && s.shape.b > 0.0)) throw std::invalid_argument("calibrateCutoff: bad shape");

  s.null_max_abs_c.assign(static_cast<std::size_t>(s.replications), 0.0);
  parallelFor(static_cast<std::size_t>(s.replications), workers, [&](std::size_t r) {
    Rng rng = makeRng(s.seed, Stream::kCalibration, {r});
    auto draw = [&] {
      std::vector<std::vector<double>> chains(static_cast<std::size_t>(s.n_mult));
      for (auto& c : chains) {
        c.resize(static_cast<std::size_t>(s.n_mc));
        for (auto& x : c) x = rng.beta(s.shape.a, s.shape.b);
        std::sort(c.begin(), c.end());
      }
      return chains;
    };
    const auto prior = draw();
    const auto post = draw();
    s.null_max_abs_c[r] = profileOfSorted(prior, post, s.q_grid).max_abs_c;
  });
  std::sort(s.null_max_abs_c.begin(), s.null_max_abs_c.end());
  s.cutoff = inverseCdfSorted(s.null_max_abs_c, s.level);
  return s;
}

NmaxResult detectNmax(const SigmaArray& sigma, const SourceConfig& config, const DetectionOptions& opt,
                      std::uint64_t seed) {
  config.validate();
  if (sigma.size() != config.data_points) throw std::invalid_argument("detectNmax: sigma length does not match D");
  if (!(opt.cutoff > 0.0)) throw std::invalid_argument("detectNmax: cutoff must be positive");
  if (opt.hard_max > kMaxSupportedNmax) throw std::invalid_argument("detectNmax: hard bound exceeds supported n_max");
  const double top_intensity = config.data_points == 1 ? config.nbar_min : config.nbar_max;
  const int start = opt.start_n_max > 0 ? opt.start_n_max : static_cast<int>(std::lround(top_intensity)) + 1;
  if (start < 1) throw std::invalid_argument("detectNmax: start n_max must be positive");

  const Eigen::VectorXd grid = config.intensityGrid();
  NmaxResult result;
  int n_max = start;
  double p_min = 0.0;
  int stage = 1;
  std::uint64_t attempt = 0;
  while (true) {
    if (n_max > opt.hard_max) {
      result.success = false;
      result.n_max = n_max;
      result.p_min = p_min;
      result.failure = "n_max exceeded the hard bound " + std::to_string(opt.hard_max);
      return result;
    }
    PriorSpec spec = PriorSpec::forNmax(n_max, p_min, true, opt.hyper);
    spec.extension = opt.extension;
    const RhoMatrix rho = buildRho(grid, n_max, true);
    const McmcConfig& mcmc = stage == 1 ? opt.low : opt.high;
    ChainSet chains = samplePosterior(sigma, rho, spec, mcmc, splitSeed(seed, Stream::kDetection, {attempt++}));

    const int ext = chains.layout.ext();
    const CProfile profile = cProfile(multiplexColumn(chains, ext, Side::kPrior),
                                      multiplexColumn(chains, ext, Side::kPosterior), opt.q_grid);
    DetectionStep step;
    step.n_max = n_max;
    step.p_min = p_min;
    step.stage = stage;
    step.n_iter = mcmc.n_iter;
    step.max_abs_c = profile.max_abs_c;
    step.q_at_max = profile.q_at_max;
    step.max_rhat = chains.maxRhat();
    step.accepted = profile.max_abs_c < opt.cutoff;
    result.trace.push_back(step);

    if (step.accepted) {
      if (stage == 1) {
        stage = 2;
        continue;
      }
      result.success = true;
      result.n_max = n_max;
      result.p_min = p_min;
      result.chains = std::move(chains);
      return result;
    }

    // Rejected: the mode of the top accuracy bounds the next extension.
    const Eigen::VectorXd top = accuracySamples(chains, Side::kPosterior).col(n_max);
    const double mode_a = densityMode(std::span<const double>(top.data(), static_cast<std::size_t>(top.size())), 0.5);
    const double next = opt.pmin_at_mode ? mode_a : 2.0 * mode_a - 1.0;
    p_min = std::clamp(std::max(p_min, next), 0.0, 1.0 - 1e-9);
    ++n_max;
    stage = 1;
  }
}

}  // namespace qdt
