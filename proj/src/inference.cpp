#include "qdt/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qdt/parallel.hpp"
#include "qdt/random.hpp"

namespace qdt {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logBetaFn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// A point on the unit interval held by its logit, with both logs kept
/// accurate near 0 and 1.
struct UnitCoord {
  double z = 0.0;
  double log_u = -std::log(2.0);
  double log1m_u = -std::log(2.0);

  static UnitCoord fromLogit(double z) { return {z, -softplus(-z), -softplus(z)}; }
  /// Beta(a, b) draw expressed through two log-gamma variates.
  static UnitCoord drawBeta(double a, double b, Rng& rng) {
    const double lx = rng.logGamma(a);
    const double ly = rng.logGamma(b);
    const double m = std::max(lx, ly);
    const double lse = m + std::log(std::exp(lx - m) + std::exp(ly - m));
    return {lx - ly, lx - lse, ly - lse};
  }
  double value() const { return std::exp(log_u); }
};

/// One Markov chain of the Metropolis-within-Gibbs sampler.
///
/// Unconstrained state: log alpha, log beta, logit u_i for the n_max
/// unordered beta(alpha, beta) coordinates, logit x for the extension
/// (extension value p_min + (1 - p_min) x). The ordered vector p is sort(u);
/// since the target is symmetric in the u_i, its sorted marginal carries the
/// n! order-statistics factor. All log-Jacobians are part of the target.
class ChainSampler {
 public:
  ChainSampler(const SigmaArray& sigma, const RhoMatrix& rho, const PriorSpec& spec, const McmcConfig& mcmc,
               Rng rng)
      : spec_(spec), mcmc_(mcmc), rng_(rng), n_(spec.n_max), ext_(spec.with_extension) {
    D_ = static_cast<int>(rho.rows());
    K_ = static_cast<int>(rho.cols());
    rho_.resize(static_cast<std::size_t>(D_) * K_);
    for (int d = 0; d < D_; ++d)
      for (int k = 0; k < K_; ++k) rho_[d * K_ + k] = rho.entries(d, k);
    hits_.resize(D_);
    misses_.resize(D_);
    for (int d = 0; d < D_; ++d) {
      hits_[d] = sigma.counts(d);
      misses_[d] = sigma.trials - sigma.counts(d);
    }
    miss_.assign(K_, 0.0);
    order_.resize(n_);
    const int n_params = 2 + n_ + (ext_ ? 1 : 0);
    log_step_.assign(n_params, mcmc.initial_log_step);
    accepted_.assign(n_params, 0);
    proposed_.assign(n_params, 0);
    initialise();
  }

  /// Runs warmup plus sampling; retained rows go to `out` starting at `row`.
  void run(std::int64_t chain_offset, MultiplexChains& out, Eigen::Index& row, int chain) {
    for (int t = 1; t <= mcmc_.n_iter; ++t) {
      const bool warmup = t <= mcmc_.n_warmup;
      const double gain = warmup ? std::pow(static_cast<double>(t), -mcmc_.adapt_decay) : 0.0;
      sweep(gain);
      if (warmup) continue;
      const std::int64_t global = chain_offset + (t - mcmc_.n_warmup - 1);
      if (global % mcmc_.n_thin != 0) continue;
      writeRow(out.posterior.row(row));
      out.chain_id(row) = chain;
      out.iteration(row) = t;
      ++row;
    }
  }

  double acceptanceRate(int param) const {
    return proposed_[param] ? static_cast<double>(accepted_[param]) / proposed_[param] : 0.0;
  }
 private:
  void initialise() {
    PriorDraw draw = samplePrior(spec_, rng_);
    log_alpha_ = std::log(draw.alpha - spec_.shapeFloor());
    log_beta_ = std::log(draw.beta - spec_.shapeFloor());
    u_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      const double p = std::clamp(draw.p_tilde(i + 1), 1e-300, 1.0 - 1e-16);
      u_[i] = UnitCoord::fromLogit(std::log(p) - std::log1p(-p));
    }
    if (ext_) {
      const double x = std::clamp((*draw.extension - spec_.p_min) / (1.0 - spec_.p_min), 1e-300, 1.0 - 1e-16);
      x_ = UnitCoord::fromLogit(std::log(x) - std::log1p(-x));
    }
    loglik_ = logLik();
  }

  // Shapes are sampled as log(shape - floor).
  double alpha() const { return spec_.shapeFloor() + std::exp(log_alpha_); }
  double beta() const { return spec_.shapeFloor() + std::exp(log_beta_); }

  double logLik() {
    if (mcmc_.flat_likelihood) return 0.0;
    std::iota(order_.begin(), order_.end(), 0);
    std::sort(order_.begin(), order_.end(), [&](int a, int b) { return u_[a].z < u_[b].z; });
    miss_[0] = 0.5;
    for (int n = 0; n < n_; ++n) miss_[n + 1] = 0.5 * std::exp(u_[order_[n]].log1m_u);
    if (ext_) miss_[n_ + 1] = 0.5 * (1.0 - spec_.p_min) * std::exp(x_.log1m_u);
    double total = 0.0;
    for (int d = 0; d < D_; ++d) {
      const double* r = &rho_[static_cast<std::size_t>(d) * K_];
      double q = 0.0;  // 1 - A_tilde_d
      for (int k = 0; k < K_; ++k) q += r[k] * miss_[k];
      if (!(q > 0.0 && q < 1.0)) return kNegInf;
      total += hits_[d] * std::log1p(-q) + misses_[d] * std::log(q);
    }
    return total;
  }

  void adapt(int param, double log_ratio, double gain) {
    if (gain > 0.0) {
      const double prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
      log_step_[param] = std::clamp(log_step_[param] + gain * (prob - mcmc_.target_acceptance), -12.0, 4.0);
    }
  }

  void tally(int param, double gain, bool accepted) {
    if (gain > 0.0) return;
    ++(accepted ? accepted_ : proposed_)[param];
  }

  bool accept(double log_ratio) { return log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio; }

  double shapeLogPrior(double log_excess, double scale) const {
    return spec_.logShapePrior(spec_.shapeFloor() + std::exp(log_excess), scale) + log_excess;
  }

  void updateShapes(double gain) {
    double s1 = 0.0, s2 = 0.0;
    for (const auto& u : u_) {
      s1 += u.log_u;
      s2 += u.log1m_u;
    }
    for (int rep = 0; rep < 2; ++rep) {
      {  // alpha
        const double prop = log_alpha_ + std::exp(log_step_[0]) * rng_.normal();
        const double a0 = alpha(), a1 = spec_.shapeFloor() + std::exp(prop), b = beta();
        const double lr = shapeLogPrior(prop, spec_.alpha_sd) - shapeLogPrior(log_alpha_, spec_.alpha_sd) -
                          n_ * (logBetaFn(a1, b) - logBetaFn(a0, b)) + (a1 - a0) * s1;
        adapt(0, lr, gain);
        tally(0, gain, false);
        if (accept(lr)) {
          log_alpha_ = prop;
          tally(0, gain, true);
        }
      }
      {  // beta
        const double prop = log_beta_ + std::exp(log_step_[1]) * rng_.normal();
        const double b0 = beta(), b1 = spec_.shapeFloor() + std::exp(prop), a = alpha();
        const double lr = shapeLogPrior(prop, spec_.beta_sd) - shapeLogPrior(log_beta_, spec_.beta_sd) -
                          n_ * (logBetaFn(a, b1) - logBetaFn(a, b0)) + (b1 - b0) * s2;
        adapt(1, lr, gain);
        tally(1, gain, false);
        if (accept(lr)) {
          log_beta_ = prop;
          tally(1, gain, true);
        }
      }
    }
  }

  /// Random-walk step on the logit of a unit coordinate whose conditional
  /// prior in logit space is proportional to u^a (1 - u)^b, followed by an
  /// independence proposal drawn from that conditional prior.
  void updateUnit(UnitCoord& coord, int param, double a, double b, double gain) {
    {
      const UnitCoord old = coord;
      const UnitCoord prop = UnitCoord::fromLogit(old.z + std::exp(log_step_[param]) * rng_.normal());
      const double dprior = a * (prop.log_u - old.log_u) + b * (prop.log1m_u - old.log1m_u);
      coord = prop;
      const double ll = logLik();
      const double lr = dprior + (ll - loglik_);
      adapt(param, lr, gain);
      tally(param, gain, false);
      if (accept(lr)) {
        loglik_ = ll;
        tally(param, gain, true);
      } else {
        coord = old;
      }
    }
    {
      const UnitCoord old = coord;
      coord = UnitCoord::drawBeta(a, b, rng_);
      const double ll = logLik();
      if (accept(ll - loglik_)) {
        loglik_ = ll;
      } else {
        coord = old;
      }
    }
  }

  void sweep(double gain) {
    updateShapes(gain);
    const double a = alpha(), b = beta();
    for (int i = 0; i < n_; ++i) updateUnit(u_[i], 2 + i, a, b, gain);
    if (ext_) updateUnit(x_, 2 + n_, spec_.extension.a, spec_.extension.b, gain);
  }

  void writeRow(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
    row(0) = alpha();
    row(1) = beta();
    std::iota(order_.begin(), order_.end(), 0);
    std::sort(order_.begin(), order_.end(), [&](int x, int y) { return u_[x].z < u_[y].z; });
    for (int n = 0; n < n_; ++n) row(2 + n) = u_[order_[n]].value();
    if (ext_) row(2 + n_) = spec_.p_min + (1.0 - spec_.p_min) * x_.value();
  }

  const PriorSpec& spec_;
  const McmcConfig& mcmc_;
  Rng rng_;
  int n_;
  bool ext_;
  int D_ = 0;
  int K_ = 0;
  std::vector<double> rho_;
  std::vector<double> hits_;
  std::vector<double> misses_;
  std::vector<double> miss_;
  std::vector<int> order_;

  double log_alpha_ = 0.0;
  double log_beta_ = 0.0;
  std::vector<UnitCoord> u_;
  UnitCoord x_;
  double loglik_ = 0.0;

  std::vector<double> log_step_;
  std::vector<long> accepted_;
  std::vector<long> proposed_;
};

std::vector<Eigen::VectorXd> splitByChain(const MultiplexChains& m, int column, int n_chains) {
  std::vector<Eigen::VectorXd> out;
  Eigen::Index min_len = std::numeric_limits<Eigen::Index>::max();
  std::vector<std::vector<double>> per(n_chains);
  for (Eigen::Index r = 0; r < m.posterior.rows(); ++r) per[m.chain_id(r)].push_back(m.posterior(r, column));
  for (const auto& c : per) min_len = std::min<Eigen::Index>(min_len, static_cast<Eigen::Index>(c.size()));
  for (const auto& c : per) out.emplace_back(Eigen::Map<const Eigen::VectorXd>(c.data(), min_len));
  return out;
}

}  // namespace

int McmcConfig::samplesPerMultiplex() const {
  validate();
  return n_chains * (n_iter - n_warmup) / n_thin;
}

void McmcConfig::validate() const {
  if (n_chains < 1 || n_mult < 1 || n_thin < 1) throw std::invalid_argument("McmcConfig: counts must be positive");
  if (n_warmup < 0 || n_iter <= n_warmup) throw std::invalid_argument("McmcConfig: need n_iter > n_warmup >= 0");
  const long long pooled = static_cast<long long>(n_chains) * (n_iter - n_warmup);
  if (pooled % n_thin != 0) {
    throw std::invalid_argument("McmcConfig: n_chains (n_iter - n_warmup) must be divisible by n_thin");
  }
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
    throw std::invalid_argument("McmcConfig: target_acceptance must lie in (0, 1)");
  }
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out{"alpha", "beta"};
  for (int n = 1; n <= n_max; ++n) out.push_back("p" + std::to_string(n));
  if (extension) out.push_back("p" + std::to_string(n_max + 1));
  return out;
}

double ChainSet::maxRhat() const {
  double worst = 1.0;
  for (const auto& m : multiplexes) {
    if (m.rhat.size() > 0) worst = std::max(worst, m.rhat.maxCoeff());
  }
  return worst;
}

Eigen::VectorXd reconstructAccuracies(const RhoMatrix& rho, const Eigen::VectorXd& a_tilde) {
  if (a_tilde.size() != rho.cols()) throw std::invalid_argument("reconstructAccuracies: length mismatch");
  return (1.0 - (rho.entries * (1.0 - a_tilde.array()).matrix()).array()).matrix();
}

double logLikelihood(const SigmaArray& sigma, const RhoMatrix& rho, const Eigen::VectorXd& a_tilde,
                     bool include_binomial_coefficient) {
  if (sigma.size() != rho.rows()) throw std::invalid_argument("logLikelihood: data and rho disagree on D");
  const Eigen::VectorXd q = rho.entries * (1.0 - a_tilde.array()).matrix();  // 1 - A_tilde
  const double T = sigma.trials;
  double total = 0.0;
  for (Eigen::Index d = 0; d < q.size(); ++d) {
    if (!(q(d) > 0.0 && q(d) < 1.0)) return kNegInf;
    const double s = sigma.counts(d);
    total += s * std::log1p(-q(d)) + (T - s) * std::log(q(d));
    if (include_binomial_coefficient) {
      total += std::lgamma(T + 1.0) - std::lgamma(s + 1.0) - std::lgamma(T - s + 1.0);
    }
  }
  return total;
}

ChainSet samplePosterior(const SigmaArray& sigma, const RhoMatrix& rho, const PriorSpec& spec,
                         const McmcConfig& mcmc, std::uint64_t seed) {
  spec.validate();
  mcmc.validate();
  if (sigma.size() != rho.rows()) throw std::invalid_argument("samplePosterior: data and rho disagree on D");
  if (rho.cols() != spec.n_max + (spec.with_extension ? 2 : 1)) {
    throw std::invalid_argument("samplePosterior: rho columns must match n_max (+1 when extended, +1 for n=0)");
  }
  if ((sigma.counts.array() < 0).any() || (sigma.counts.array() > sigma.trials).any()) {
    throw std::invalid_argument("samplePosterior: counts must lie in [0, T]");
  }

  ChainSet out;
  out.layout = {spec.n_max, spec.with_extension};
  out.spec = spec;
  out.mcmc = mcmc;
  out.seed = seed;
  const int cols = out.layout.cols();
  const int n_mc = mcmc.samplesPerMultiplex();
  const int per_chain = mcmc.n_iter - mcmc.n_warmup;

  out.multiplexes.resize(mcmc.n_mult);
  for (auto& m : out.multiplexes) {
    m.posterior.resize(n_mc, cols);
    m.chain_id.resize(n_mc);
    m.iteration.resize(n_mc);
    m.prior.resize(n_mc, cols);
  }

  // Retained rows of chain c start after all rows kept by chains < c.
  std::vector<Eigen::Index> first_row(mcmc.n_chains + 1, 0);
  for (int c = 0; c < mcmc.n_chains; ++c) {
    const std::int64_t lo = static_cast<std::int64_t>(c) * per_chain;
    const std::int64_t hi = lo + per_chain;
    const std::int64_t kept = (hi + mcmc.n_thin - 1) / mcmc.n_thin - (lo + mcmc.n_thin - 1) / mcmc.n_thin;
    first_row[c + 1] = first_row[c] + kept;
  }

  const std::size_t tasks = static_cast<std::size_t>(mcmc.n_mult) * (mcmc.n_chains + 1);
  std::vector<Eigen::VectorXd> acceptance(static_cast<std::size_t>(mcmc.n_mult) * mcmc.n_chains);
  parallelFor(tasks, mcmc.workers, [&](std::size_t task) {
    const int m = static_cast<int>(task / (mcmc.n_chains + 1));
    const int c = static_cast<int>(task % (mcmc.n_chains + 1));
    auto& mult = out.multiplexes[m];
    if (c == mcmc.n_chains) {
      Rng rng = makeRng(seed, Stream::kPrior, {static_cast<std::uint64_t>(m)});
      for (int r = 0; r < n_mc; ++r) {
        const PriorDraw d = samplePrior(spec, rng);
        mult.prior(r, 0) = d.alpha;
        mult.prior(r, 1) = d.beta;
        for (int n = 1; n <= spec.n_max; ++n) mult.prior(r, 1 + n) = d.p_tilde(n);
        if (spec.with_extension) mult.prior(r, 2 + spec.n_max) = *d.extension;
      }
      return;
    }
    ChainSampler sampler(sigma, rho, spec, mcmc,
                         makeRng(seed, Stream::kPosterior, {static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(c)}));
    Eigen::Index row = first_row[c];
    sampler.run(static_cast<std::int64_t>(c) * per_chain, mult, row, c);
    Eigen::VectorXd acc(cols);
    for (int p = 0; p < cols; ++p) acc(p) = sampler.acceptanceRate(p);
    acceptance[static_cast<std::size_t>(m) * mcmc.n_chains + c] = acc;
  });

  for (int m = 0; m < mcmc.n_mult; ++m) {
    auto& mult = out.multiplexes[m];
    mult.rhat.resize(cols);
    mult.ess.resize(cols);
    mult.acceptance = Eigen::VectorXd::Zero(cols);
    for (int c = 0; c < mcmc.n_chains; ++c) mult.acceptance += acceptance[static_cast<std::size_t>(m) * mcmc.n_chains + c];
    mult.acceptance /= mcmc.n_chains;
    for (int p = 0; p < cols; ++p) {
      const auto chains = splitByChain(mult, p, mcmc.n_chains);
      mult.rhat(p) = splitRhat(chains);
      mult.ess(p) = effectiveSampleSize(chains);
    }
  }
  return out;
}

Eigen::MatrixXd squeeze(const ChainSet& chains, Side side) {
  if (chains.multiplexes.empty()) return {};
  const Eigen::Index cols = chains.layout.cols();
  Eigen::Index rows = 0;
  for (const auto& m : chains.multiplexes) {
    const auto& src = side == Side::kPrior ? m.prior : m.posterior;
    if (src.cols() != cols) throw std::invalid_argument("squeeze: multiplexes disagree on layout");
    rows += src.rows();
  }
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& m : chains.multiplexes) {
    const auto& src = side == Side::kPrior ? m.prior : m.posterior;
    out.middleRows(at, src.rows()) = src;
    at += src.rows();
  }
  return out;
}

Eigen::VectorXd squeezeColumn(const ChainSet& chains, int column, Side side) {
  Eigen::Index rows = 0;
  for (const auto& m : chains.multiplexes) rows += (side == Side::kPrior ? m.prior : m.posterior).rows();
  Eigen::VectorXd out(rows);
  Eigen::Index at = 0;
  for (const auto& m : chains.multiplexes) {
    const auto& src = side == Side::kPrior ? m.prior : m.posterior;
    out.segment(at, src.rows()) = src.col(column);
    at += src.rows();
  }
  return out;
}

std::vector<Eigen::VectorXd> multiplexColumn(const ChainSet& chains, int column, Side side) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(chains.multiplexes.size());
  for (const auto& m : chains.multiplexes) out.emplace_back((side == Side::kPrior ? m.prior : m.posterior).col(column));
  return out;
}

Eigen::MatrixXd accuracySamples(const ChainSet& chains, Side side) {
  const Eigen::MatrixXd all = squeeze(chains, side);
  const int n_max = chains.layout.n_max;
  Eigen::MatrixXd a(all.rows(), n_max + 1);
  a.col(0).setConstant(0.5);
  for (int n = 1; n <= n_max; ++n) a.col(n) = (1.0 + all.col(chains.layout.p(n)).array()) * 0.5;
  return a;
}

Eigen::MatrixXd reconstructedAccuracySamples(const ChainSet& chains, const RhoMatrix& rho) {
  const Eigen::MatrixXd all = squeeze(chains, Side::kPosterior);
  const int K = static_cast<int>(rho.cols());
  const auto& layout = chains.layout;
  if (K != layout.n_max + (layout.extension ? 2 : 1)) {
    throw std::invalid_argument("reconstructedAccuracySamples: rho does not match the chain layout");
  }
  // miss(r, n) = 1 - a_tilde_n = (1 - p_n) / 2
  Eigen::MatrixXd miss(all.rows(), K);
  miss.col(0).setConstant(0.5);
  for (int n = 1; n < K; ++n) miss.col(n) = (1.0 - all.col(1 + n).array()) * 0.5;
  return (1.0 - (miss * rho.entries.transpose()).array()).matrix();
}

double splitRhat(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    const Eigen::Index h = c.size() / 2;
    if (h < 2) continue;
    halves.emplace_back(c.head(h));
    halves.emplace_back(c.segment(c.size() - h, h));
  }
  if (halves.size() < 2) return 1.0;
  Eigen::Index n = halves.front().size();
  for (const auto& h : halves) n = std::min(n, h.size());
  const double m = static_cast<double>(halves.size());
  Eigen::VectorXd means(halves.size()), vars(halves.size());
  for (std::size_t j = 0; j < halves.size(); ++j) {
    const auto seg = halves[j].head(n);
    means(j) = seg.mean();
    vars(j) = (seg.array() - means(j)).square().sum() / (n - 1.0);
  }
  const double W = vars.mean();
  const double B = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(W > 0.0)) return B > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

double effectiveSampleSize(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) return 0.0;
  Eigen::Index n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  const double m = static_cast<double>(chains.size());
  if (n < 4) return m * n;
  std::vector<Eigen::VectorXd> centred;
  Eigen::VectorXd means(chains.size()), vars(chains.size());
  for (std::size_t j = 0; j < chains.size(); ++j) {
    means(j) = chains[j].head(n).mean();
    centred.emplace_back(chains[j].head(n).array() - means(j));
    vars(j) = centred.back().squaredNorm() / (n - 1.0);
  }
  const double W = vars.mean();
  const double B = m > 1 ? n * (means.array() - means.mean()).square().sum() / (m - 1.0) : 0.0;
  const double var_plus = (n - 1.0) / n * W + B / n;
  if (!(var_plus > 0.0)) return m * n;
  auto autocov = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (const auto& c : centred) acc += c.head(n - lag).dot(c.tail(n - lag)) / n;
    return acc / m;
  };
  // Geyer's initial monotone positive sequence on pairs of lags.
  double sum_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    const double rho0 = 1.0 - (W - autocov(t) * n / (n - 1.0)) / var_plus;
    const double rho1 = 1.0 - (W - autocov(t + 1) * n / (n - 1.0)) / var_plus;
    double pair = rho0 + rho1;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sum_pairs += pair;
  }
  const double tau = std::max(2.0 * sum_pairs - 1.0, 1.0 / std::log10(m * n));
  return m * n / tau;
}

}  // namespace qdt
