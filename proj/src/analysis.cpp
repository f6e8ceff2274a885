#include "qdt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>

#include "qdt/random.hpp"

namespace qdt {
namespace {

constexpr double kKernelCut = 6.0;  // kernel support truncated at this many bandwidths

std::vector<double> sortedCopy(std::span<const double> chain) {
  std::vector<double> v(chain.begin(), chain.end());
  std::sort(v.begin(), v.end());
  return v;
}

double sortedQuantile(const std::vector<double>& v, double q) {
  // Linear interpolation between order statistics (type 7).
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// Kernel sum over sorted samples within the truncated support around x.
double kernelSum(const std::vector<double>& sorted, double x, double h) {
  const auto first = std::lower_bound(sorted.begin(), sorted.end(), x - kKernelCut * h);
  const auto last = std::upper_bound(first, sorted.end(), x + kKernelCut * h);
  double acc = 0.0;
  for (auto it = first; it != last; ++it) {
    const double z = (x - *it) / h;
    acc += std::exp(-0.5 * z * z);
  }
  return acc;
}

double bandwidthOfSorted(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = sortedQuantile(v, 0.75) - sortedQuantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  return 0.9 * spread * std::pow(n, -0.2);
}

double kdeSorted(const std::vector<double>& sorted, double x, double h, std::optional<double> reflect_at) {
  const double norm = 1.0 / (static_cast<double>(sorted.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  double acc = kernelSum(sorted, x, h);
  // The mirrored sample 2L - x_i contributes K(x - 2L + x_i) = K(x_i - (2L - x)).
  if (reflect_at) acc += kernelSum(sorted, 2.0 * *reflect_at - x, h);
  return acc * norm;
}

}  // namespace

Interval hdi(std::span<const double> chain, double mass) {
  if (!(mass > 0.0 && mass < 1.0)) throw std::invalid_argument("hdi: mass must lie in (0, 1)");
  if (chain.size() < 100) throw std::invalid_argument("hdi: need at least 100 samples");
  const std::vector<double> v = sortedCopy(chain);
  const std::size_t n = v.size();
  const auto k = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n) - 1e-9));
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + k <= n; ++i) {
    const double w = v[i + k - 1] - v[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {v[best], v[best + k - 1]};
}

double silvermanBandwidth(std::span<const double> chain) { return bandwidthOfSorted(sortedCopy(chain)); }

double kdeDensity(std::span<const double> chain, double x, double bandwidth, std::optional<double> reflect_at) {
  if (chain.empty()) throw std::invalid_argument("kdeDensity: empty chain");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kdeDensity: bandwidth must be positive");
  return kdeSorted(sortedCopy(chain), x, bandwidth, reflect_at);
}

double densityMode(std::span<const double> chain, std::optional<double> reflect_at, int grid_points) {
  if (chain.empty()) throw std::invalid_argument("densityMode: empty chain");
  const std::vector<double> v = sortedCopy(chain);
  const double lo = v.front(), hi = v.back();
  const double h = bandwidthOfSorted(v);
  if (!(hi > lo) || !(h > 0.0)) return sortedQuantile(v, 0.5);
  double best_x = lo, best_f = -1.0;
  for (int g = 0; g < grid_points; ++g) {
    const double x = lo + (hi - lo) * g / (grid_points - 1.0);
    const double f = kdeSorted(v, x, h, reflect_at);
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

double savageDickey(std::span<const double> prior_a1, std::span<const double> posterior_a1, double point) {
  const std::vector<double> prior = sortedCopy(prior_a1);
  const std::vector<double> post = sortedCopy(posterior_a1);
  if (prior.empty() || post.empty()) throw std::invalid_argument("savageDickey: empty chain");
  const double h_prior = bandwidthOfSorted(prior);
  const double h_post = bandwidthOfSorted(post);
  if (!(h_prior > 0.0)) throw std::invalid_argument("savageDickey: degenerate prior chain");
  const double f_prior = kdeSorted(prior, point, h_prior, point);
  if (!(f_prior > 0.0)) throw std::domain_error("savageDickey: prior density at the test point is zero");
  if (!(h_post > 0.0)) return post.front() == point ? std::numeric_limits<double>::infinity()
                                                    : -std::numeric_limits<double>::infinity();
  const double f_post = kdeSorted(post, point, h_post, point);
  if (!(f_post > 0.0)) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(f_post / f_prior);
}

double mseAccuracies(const Eigen::VectorXd& modes, const Eigen::VectorXd& truth) {
  if (modes.size() != truth.size()) throw std::invalid_argument("mseAccuracies: length mismatch");
  if (modes.size() == 0) throw std::invalid_argument("mseAccuracies: empty input");
  return (modes - truth).squaredNorm() / static_cast<double>(modes.size());
}

const ParameterSummary& PosteriorSummary::at(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw std::out_of_range("PosteriorSummary: no parameter " + name);
}

PosteriorSummary summarize(const Eigen::MatrixXd& samples, const std::vector<std::string>& names,
                           const std::vector<double>& hdi_masses,
                           const std::vector<std::optional<double>>& reflect_at) {
  if (static_cast<Eigen::Index>(names.size()) != samples.cols()) {
    throw std::invalid_argument("summarize: one name per column required");
  }
  PosteriorSummary out;
  out.hdi_masses = hdi_masses;
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    const Eigen::VectorXd col = samples.col(c);
    std::span<const double> view(col.data(), static_cast<std::size_t>(col.size()));
    ParameterSummary p;
    p.name = names[c];
    p.mean = col.mean();
    p.median = sortedQuantile(sortedCopy(view), 0.5);
    const std::optional<double> boundary = c < static_cast<Eigen::Index>(reflect_at.size()) ? reflect_at[c] : std::nullopt;
    p.mode = densityMode(view, boundary);
    for (double mass : hdi_masses) p.hdis.push_back(hdi(view, mass));
    out.parameters.push_back(std::move(p));
  }
  return out;
}

ProbabilityEstimate betaPosteriorEstimate(int successes, int trials, double credible_mass, bool trials_plus_one) {
  if (trials < 1 || successes < 0 || successes > trials) throw std::invalid_argument("betaPosteriorEstimate: bad counts");
  ProbabilityEstimate e;
  e.successes = successes;
  e.trials = trials;
  e.post_a = successes + 1.0;
  e.post_b = trials_plus_one ? trials + 1.0 : trials - successes + 1.0;
  e.mean = e.post_a / (e.post_a + e.post_b);
  const double tail = 0.5 * (1.0 - credible_mass);
  e.low = boost::math::ibeta_inv(e.post_a, e.post_b, tail);
  e.high = boost::math::ibeta_inv(e.post_a, e.post_b, 1.0 - tail);
  return e;
}

namespace {

struct MeritPoint {
  std::vector<double> p_success;
  std::vector<double> p_in_hdi;
  std::vector<MeanSdEstimate> hdi_len;
  MeanSdEstimate mse;
};

MeanSdEstimate meanSd(const std::vector<double>& xs) {
  MeanSdEstimate e;
  e.used = static_cast<int>(xs.size());
  if (xs.empty()) return e;
  e.present = true;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  e.mean = m;
  e.sd = xs.size() > 1 ? std::sqrt(ss / (xs.size() - 1.0)) : 0.0;
  return e;
}

MeritPoint evaluate(const std::vector<ReplicationRecord>& recs, const std::vector<std::size_t>& idx,
                    const MeritOptions& opt) {
  MeritPoint p;
  const double n = static_cast<double>(idx.size());
  for (double thr : opt.r_sd_thresholds) {
    int k = 0;
    for (std::size_t i : idx) k += recs[i].r_sd < thr;
    p.p_success.push_back(k / n);
  }
  for (std::size_t m = 0; m < opt.hdi_masses.size(); ++m) {
    int k = 0;
    std::vector<double> lens;
    for (std::size_t i : idx) {
      const Interval& iv = recs[i].hdi_a1.at(m);
      k += iv.contains(opt.truth_a1);
      if (iv.low > opt.hdi_exclusion) lens.push_back(iv.length());
    }
    p.p_in_hdi.push_back(k / n);
    p.hdi_len.push_back(meanSd(lens));
  }
  std::vector<double> mses;
  for (std::size_t i : idx) mses.push_back(recs[i].mse);
  p.mse = meanSd(mses);
  return p;
}

double sdOf(const std::vector<double>& xs) { return meanSd(xs).sd; }

}  // namespace

MeritReport meritFromReplications(const std::vector<ReplicationRecord>& records, const MeritOptions& opt) {
  if (records.size() < 2) throw std::invalid_argument("meritFromReplications: need at least 2 replications");
  for (const auto& r : records) {
    if (r.hdi_a1.size() != opt.hdi_masses.size()) {
      throw std::invalid_argument("meritFromReplications: record HDIs do not match hdi_masses");
    }
  }
  const std::size_t n = records.size();
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  const MeritPoint point = evaluate(records, all, opt);

  // Bootstrap over replications.
  const std::size_t T = opt.r_sd_thresholds.size(), M = opt.hdi_masses.size();
  std::vector<std::vector<double>> bs_success(T), bs_in_hdi(M), bs_len_mean(M), bs_len_sd(M);
  std::vector<double> bs_mse_mean, bs_mse_sd;
  Rng rng = makeRng(opt.seed, Stream::kBootstrap);
  std::vector<std::size_t> idx(n);
  for (int b = 0; b < opt.bootstrap_resamples; ++b) {
    for (auto& i : idx) i = rng.below(n);
    const MeritPoint p = evaluate(records, idx, opt);
    for (std::size_t t = 0; t < T; ++t) bs_success[t].push_back(p.p_success[t]);
    for (std::size_t m = 0; m < M; ++m) {
      bs_in_hdi[m].push_back(p.p_in_hdi[m]);
      if (p.hdi_len[m].present) {
        bs_len_mean[m].push_back(p.hdi_len[m].mean);
        bs_len_sd[m].push_back(p.hdi_len[m].sd);
      }
    }
    bs_mse_mean.push_back(p.mse.mean);
    bs_mse_sd.push_back(p.mse.sd);
  }

  MeritReport report;
  report.replications = static_cast<int>(n);
  report.r_sd_thresholds = opt.r_sd_thresholds;
  report.hdi_masses = opt.hdi_masses;
  report.bootstrap_resamples = opt.bootstrap_resamples;
  report.bootstrap_seed = opt.seed;
  for (std::size_t t = 0; t < T; ++t) {
    const int k = static_cast<int>(std::lround(point.p_success[t] * n));
    auto e = betaPosteriorEstimate(k, static_cast<int>(n), opt.credible_mass, opt.beta_trials_plus_one);
    e.bootstrap_se = sdOf(bs_success[t]);
    report.p_success.push_back(e);
  }
  for (std::size_t m = 0; m < M; ++m) {
    const int k = static_cast<int>(std::lround(point.p_in_hdi[m] * n));
    auto e = betaPosteriorEstimate(k, static_cast<int>(n), opt.credible_mass, opt.beta_trials_plus_one);
    e.bootstrap_se = sdOf(bs_in_hdi[m]);
    report.p_a1_in_hdi.push_back(e);
    MeanSdEstimate len = point.hdi_len[m];
    len.mean_se = sdOf(bs_len_mean[m]);
    len.sd_se = sdOf(bs_len_sd[m]);
    report.hdi_length.push_back(len);
  }
  report.mse = point.mse;
  report.mse.mean_se = sdOf(bs_mse_mean);
  report.mse.sd_se = sdOf(bs_mse_sd);
  return report;
}

}  // namespace qdt
