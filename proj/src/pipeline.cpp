#include "qdt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qdt/parallel.hpp"
#include "qdt/random.hpp"
#include "qdt/serialization.hpp"

namespace qdt {
namespace fs = std::filesystem;

namespace {

std::span<const double> view(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

Reconstruction reconstruct(const SigmaArray& sigma, const SourceConfig& config, const ReconstructionOptions& options,
                           std::uint64_t seed, const PerceptionModel* truth) {
  Reconstruction r;
  r.nbar_grid = config.intensityGrid();
  r.observed_A = sigma.observedAccuracy();
  if (truth) r.model_A = truth->ensembleAccuracies(r.nbar_grid);
  r.detection = detectNmax(sigma, config, options.detection, seed);
  if (!r.detection.success) return r;

  const ChainSet& chains = r.detection.chains;
  const int n_max = chains.layout.n_max;
  const int D = config.data_points;
  const Eigen::MatrixXd raw = squeeze(chains, Side::kPosterior);
  const Eigen::MatrixXd acc = accuracySamples(chains, Side::kPosterior);
  const Eigen::MatrixXd prior_acc = accuracySamples(chains, Side::kPrior);
  const RhoMatrix rho = buildRho(r.nbar_grid, n_max, chains.layout.extension);
  const Eigen::MatrixXd ens = reconstructedAccuracySamples(chains, rho);

  Eigen::MatrixXd samples(raw.rows(), 2 + n_max + D);
  std::vector<std::string> names{"alpha", "beta"};
  std::vector<std::optional<double>> boundary{0.0, 0.0};
  samples.col(0) = raw.col(ParameterLayout::alpha());
  samples.col(1) = raw.col(ParameterLayout::beta());
  for (int n = 1; n <= n_max; ++n) {
    samples.col(1 + n) = acc.col(n);
    names.push_back("a_tilde_" + std::to_string(n));
    boundary.emplace_back(0.5);
  }
  for (int d = 0; d < D; ++d) {
    samples.col(2 + n_max + d) = ens.col(d);
    names.push_back("A_tilde_" + std::to_string(d + 1));
    boundary.emplace_back(0.5);
  }
  r.summary = summarize(samples, names, options.hdi_masses, boundary);

  r.reconstructed_A.resize(D);
  for (int d = 0; d < D; ++d) r.reconstructed_A(d) = r.summary.parameters[2 + n_max + d].mode;

  const Eigen::VectorXd prior_a1 = prior_acc.col(1);
  const Eigen::VectorXd post_a1 = acc.col(1);
  r.r_sd = savageDickey(view(prior_a1), view(post_a1), 0.5);

  if (truth) {
    Eigen::VectorXd modes(n_max), target(n_max);
    for (int n = 1; n <= n_max; ++n) {
      modes(n - 1) = r.summary.parameters[1 + n].mode;
      target(n - 1) = truth->accuracy(n);
    }
    r.mse = mseAccuracies(modes, target);
  }
  r.max_rhat = chains.maxRhat();
  r.converged = chains.converged();
  r.prior_recovery = options.detection.low.flat_likelihood && options.detection.high.flat_likelihood &&
                     r.detection.trace.size() == 2;
  return r;
}

ReplicationRecord replicationRecord(const Reconstruction& r) {
  if (!r.ok()) throw std::invalid_argument("replicationRecord: reconstruction failed");
  ReplicationRecord rec;
  rec.r_sd = r.r_sd;
  const ParameterSummary& a1 = r.summary.at("a_tilde_1");
  rec.mode_a1 = a1.mode;
  rec.hdi_a1 = a1.hdis;
  rec.mse = r.mse.value_or(std::numeric_limits<double>::quiet_NaN());
  rec.n_max = r.detection.n_max;
  rec.converged = r.converged;
  return rec;
}

// ---------------------------------------------------------------------------

SourceConfig SweepCell::source() const {
  if (sigma_rel > 0.0) return SourceConfig::withRelativeNoise(nbar_min, nbar_max, data_points, trials, sigma_rel);
  return SourceConfig::withUniformNoise(nbar_min, nbar_max, data_points, trials, sigma_nbar);
}

PerceptionModel SweepCell::model() const {
  return PerceptionModel::binomialCovering(p1, data_points == 1 ? nbar_min : nbar_max);
}

void SweepGrid::validate() const {
  auto nonEmpty = [](const auto& v, const char* what) {
    if (v.empty()) throw std::invalid_argument(std::string("SweepGrid: empty axis ") + what);
  };
  nonEmpty(nbar_min, "nbar_min");
  nonEmpty(nbar_max, "nbar_max");
  nonEmpty(data_points, "data_points");
  nonEmpty(trials, "trials");
  nonEmpty(p1, "p1");
  nonEmpty(sigma_nbar, "sigma_nbar");
  nonEmpty(sigma_rel, "sigma_rel");
  nonEmpty(hdi_masses, "hdi_masses");
  if (replications < 1) throw std::invalid_argument("SweepGrid: replications must be at least 1");
  const bool abs_noise = std::any_of(sigma_nbar.begin(), sigma_nbar.end(), [](double s) { return s != 0.0; });
  const bool rel_noise = std::any_of(sigma_rel.begin(), sigma_rel.end(), [](double s) { return s != 0.0; });
  if (abs_noise && rel_noise) throw std::invalid_argument("SweepGrid: use either sigma_nbar or sigma_rel, not both");
  for (const auto& c : cells()) {
    c.source().validate();
    if (!(c.p1 >= 0.0 && c.p1 <= 1.0)) throw std::invalid_argument("SweepGrid: p1 must lie in [0, 1]");
  }
}

std::vector<SweepCell> SweepGrid::cells() const {
  std::vector<SweepCell> out;
  for (double lo : nbar_min)
    for (int D : data_points)
      for (int T : trials)
        for (double p : p1)
          for (double s : sigma_nbar)
            for (double sr : sigma_rel)
              for (double hi : nbar_max) {
                SweepCell c;
                c.index = static_cast<int>(out.size());
                c.nbar_min = lo;
                c.nbar_max = hi;
                c.data_points = D;
                c.trials = T;
                c.p1 = p;
                c.sigma_nbar = s;
                c.sigma_rel = sr;
                out.push_back(c);
              }
  return out;
}

int CellResult::failures() const {
  return static_cast<int>(std::count_if(replications.begin(), replications.end(), [](const auto& r) { return !r.ok; }));
}

std::vector<ReplicationRecord> CellResult::records() const {
  std::vector<ReplicationRecord> out;
  for (const auto& r : replications)
    if (r.ok) out.push_back(r.record);
  return out;
}

std::uint64_t replicationSeed(std::uint64_t seed, int cell, int rep) {
  return splitSeed(seed, Stream::kSweep, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep)});
}

std::optional<MeritReport> cellMerit(const SweepGrid& grid, const SweepCell& cell,
                                     const std::vector<ReplicationOutcome>& reps, const SweepOptions& options) {
  std::vector<ReplicationRecord> records;
  for (const auto& r : reps)
    if (r.ok) records.push_back(r.record);
  if (records.size() < 2) return std::nullopt;
  MeritOptions m;
  m.r_sd_thresholds = grid.r_sd_thresholds;
  m.hdi_masses = grid.hdi_masses;
  m.hdi_exclusion = grid.hdi_exclusion;
  m.truth_a1 = cell.model().accuracy(1);
  m.bootstrap_resamples = options.bootstrap_resamples;
  m.beta_trials_plus_one = options.beta_trials_plus_one;
  m.seed = splitSeed(options.seed, Stream::kBootstrap, {static_cast<std::uint64_t>(cell.index)});
  return meritFromReplications(records, m);
}

namespace {

/// Everything a cell's numbers depend on; a checkpoint is reused only if
/// its stored inputs equal these.
Json cellInputs(const SweepGrid& grid, const SweepCell& cell, const SweepOptions& options) {
  ReconstructConfig rc;
  rc.options = options.reconstruction;
  rc.cutoff = options.reconstruction.detection.cutoff;
  return {{"cell", toJson(cell)},
          {"seed", options.seed},
          {"replications", grid.replications},
          {"reconstruction", toJson(rc)}};
}

ReplicationOutcome runReplication(const SweepCell& cell, int rep, const SweepOptions& options) {
  ReplicationOutcome out;
  out.replication = rep;
  out.seed = replicationSeed(options.seed, cell.index, rep);
  try {
    const SourceConfig source = cell.source();
    const PerceptionModel model = cell.model();
    const SimulationResult sim = runExperiment(source, model, out.seed);
    ReconstructionOptions ro = options.reconstruction;
    ro.detection.low.workers = 1;
    ro.detection.high.workers = 1;
    const Reconstruction r = reconstruct(SigmaArray{sim.sigma, source.trials}, source, ro, out.seed, &model);
    if (!r.ok()) {
      out.failure = r.detection.failure;
      return out;
    }
    out.record = replicationRecord(r);
    out.ok = true;
  } catch (const std::exception& e) {
    out.failure = e.what();
  }
  return out;
}

}  // namespace

std::vector<CellResult> runSweep(const SweepGrid& grid, const SweepOptions& options) {
  grid.validate();
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  std::vector<CellResult> results;
  for (const SweepCell& cell : grid.cells()) {
    CellResult result;
    result.cell = cell;
    const Json inputs = cellInputs(grid, cell, options);
    const fs::path checkpoint =
        options.out_dir.empty() ? fs::path() : options.out_dir / "cells" / ("cell_" + std::to_string(cell.index) + ".json");

    bool resumed = false;
    if (!checkpoint.empty() && fs::exists(checkpoint)) {
      try {
        const Json saved = readJsonFile(checkpoint);
        checkSchema(saved, schema::kCell);
        if (saved.at("inputs") == inputs) {
          for (const auto& r : saved.at("replications")) result.replications.push_back(replicationOutcomeFromJson(r));
          resumed = static_cast<int>(result.replications.size()) == grid.replications;
        }
      } catch (const std::exception&) {
        resumed = false;
      }
      if (!resumed) result.replications.clear();
    }

    if (resumed) {
      log("cell " + std::to_string(cell.index) + ": loaded from checkpoint");
    } else {
      log("cell " + std::to_string(cell.index) + ": running " + std::to_string(grid.replications) + " replications");
      result.replications.resize(static_cast<std::size_t>(grid.replications));
      parallelFor(static_cast<std::size_t>(grid.replications), options.workers, [&](std::size_t rep) {
        result.replications[rep] = runReplication(cell, static_cast<int>(rep), options);
      });
    }
    result.merit = cellMerit(grid, cell, result.replications, options);

    if (!checkpoint.empty() && !resumed) {
      Json reps = Json::array();
      for (const auto& r : result.replications) reps.push_back(toJson(r));
      Json doc{{"schema", schema::kCell}, {"inputs", inputs}, {"replications", reps}};
      doc["merit"] = result.merit ? toJson(*result.merit) : Json(nullptr);
      writeJsonFile(checkpoint, doc);
    }
    log("cell " + std::to_string(cell.index) + ": " + std::to_string(result.failures()) + " failed replications");
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace qdt
