// qdt: simulate, reconstruct, calibrate, sweep and report.
//
// Exit codes: 0 success, 2 finished with flagged convergence problems or
// failed replications, 1 hard error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qdt/nmax_detector.hpp"
#include "qdt/pipeline.hpp"
#include "qdt/serialization.hpp"
#include "qdt/trial_simulator.hpp"

namespace fs = std::filesystem;
using namespace qdt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitFlagged = 2;

std::string utcNow() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void logLine(const std::string& msg) { std::cerr << "[qdt] " << msg << std::endl; }

struct CommonFlags {
  std::uint64_t seed = 1;
  int workers = 1;
};

struct ReconstructFlags {
  std::string config_path;
  std::optional<double> cutoff;
  std::string cache_dir = ".qdt-cache";
  bool pmin_literal = false;
  bool flat_likelihood = false;
  bool folded_hyper_prior = false;
};

void addReconstructFlags(CLI::App* app, ReconstructFlags& f) {
  app->add_option("--config", f.config_path, "Reconstruction config (qdt.reconstruct-config/1)")->check(CLI::ExistingFile);
  app->add_option("--cutoff", f.cutoff, "Explicit |C| cut-off; skips calibration");
  app->add_option("--calibration-cache", f.cache_dir, "Directory for cached cut-off calibrations");
  app->add_flag("--pmin-literal", f.pmin_literal, "Set p_min from the mode of a_tilde_nmax (literal rule)");
  app->add_flag("--flat-likelihood", f.flat_likelihood, "Replace the likelihood by a constant (prior recovery check)");
  app->add_flag("--folded-hyper-prior", f.folded_hyper_prior, "Fold Normal(1, s) at zero for the shape hyper-priors");
}

/// Loads the config, applies the flags and resolves the cut-off.
ReconstructConfig resolveReconstruct(const ReconstructFlags& f, const CommonFlags& common,
                                     std::optional<std::string>* calibration_key) {
  ReconstructConfig rc;
  if (!f.config_path.empty()) rc = reconstructConfigFromJson(readJsonFile(f.config_path));
  auto& d = rc.options.detection;
  if (f.pmin_literal) d.pmin_at_mode = true;
  if (f.flat_likelihood) d.low.flat_likelihood = d.high.flat_likelihood = true;
  if (f.folded_hyper_prior) d.hyper = ShapeHyperPrior::kFolded;
  d.low.workers = d.high.workers = common.workers;
  if (f.cutoff) rc.cutoff = f.cutoff;
  if (rc.cutoff) {
    d.cutoff = *rc.cutoff;
    if (calibration_key) calibration_key->reset();
    return rc;
  }
  CutoffCalibration settings;
  settings.n_mult = d.high.n_mult;
  settings.n_mc = d.high.samplesPerMultiplex();
  settings.replications = rc.calibration_replications;
  settings.shape = d.extension;
  settings.level = rc.calibration_level;
  settings.seed = rc.calibration_seed;
  settings.q_grid = d.q_grid;
  logLine("cut-off calibration " + settings.key());
  const CutoffCalibration cal = loadOrCalibrate(settings, f.cache_dir, common.workers);
  logLine("cut-off " + formatDouble(cal.cutoff));
  d.cutoff = cal.cutoff;
  rc.cutoff = cal.cutoff;
  if (calibration_key) *calibration_key = settings.key();
  return rc;
}

void printAccuracyTable(const Eigen::VectorXd& grid, const Eigen::VectorXd& observed,
                        const std::optional<Eigen::VectorXd>& model, const Eigen::VectorXd* reconstructed) {
  std::printf("%4s %8s %10s", "d", "nbar", "Sigma/T");
  if (model) std::printf(" %10s", "model A");
  if (reconstructed) std::printf(" %10s", "recon A");
  std::printf("\n");
  for (Eigen::Index d = 0; d < grid.size(); ++d) {
    std::printf("%4ld %8.4g %10.5f", static_cast<long>(d + 1), grid(d), observed(d));
    if (model) std::printf(" %10.5f", (*model)(d));
    if (reconstructed) std::printf(" %10.5f", (*reconstructed)(d));
    std::printf("\n");
  }
}

int cmdSimulate(const std::string& config_path, const std::string& out, bool histogram, const CommonFlags& common) {
  const ExperimentConfig cfg = experimentFromJson(readJsonFile(config_path));
  for (const auto& w : cfg.source.warnings()) logLine("warning: " + w);
  const SimulationResult sim = runExperiment(cfg.source, cfg.model, common.seed, histogram, common.workers);
  writeJsonFile(out, toJson(sim));
  const Eigen::VectorXd grid = cfg.source.intensityGrid();
  std::printf("Sigma:");
  for (Eigen::Index d = 0; d < sim.sigma.size(); ++d) std::printf(" %d", sim.sigma(d));
  std::printf("  (T = %d)\n", cfg.source.trials);
  printAccuracyTable(grid, SigmaArray{sim.sigma, cfg.source.trials}.observedAccuracy(),
                     cfg.model.ensembleAccuracies(grid), nullptr);
  return kExitOk;
}

int cmdReconstruct(const std::string& sim_path, const std::string& out_dir, const ReconstructFlags& f,
                   const CommonFlags& common) {
  const SimulationResult sim = simulationFromJson(readJsonFile(sim_path));
  const ReconstructConfig rc = resolveReconstruct(f, common, nullptr);
  const Reconstruction r =
      reconstruct(SigmaArray{sim.sigma, sim.config.trials}, sim.config, rc.options, common.seed, &sim.model);
  const fs::path dir(out_dir);
  Json summary = toJson(r);
  summary["config"] = toJson(rc);
  summary["seed"] = common.seed;
  writeJsonFile(dir / "summary.json", summary);
  writeJsonFile(dir / "detection.json", toJson(r.detection));
  if (!r.ok()) {
    logLine("n_max detection failed: " + r.detection.failure);
    return kExitError;
  }
  writeTextFileAtomic(dir / "chains.csv", chainsToCsv(r.detection.chains));

  std::printf("n_max = %d (p_min = %.4f), r_SD(0.5) = %.3f dB, max R-hat = %.4f\n", r.detection.n_max,
              r.detection.p_min, r.r_sd, r.max_rhat);
  if (r.mse) std::printf("MSE(a_n) = %.4g\n", *r.mse);
  std::printf("%6s %10s %22s\n", "n", "mode", "0.95-HDI");
  for (int n = 1; n <= r.detection.n_max; ++n) {
    const auto& p = r.summary.at("a_tilde_" + std::to_string(n));
    std::printf("%6d %10.5f   [%8.5f, %8.5f]\n", n, p.mode, p.hdis.front().low, p.hdis.front().high);
  }
  printAccuracyTable(r.nbar_grid, r.observed_A, r.model_A, &r.reconstructed_A);
  if (f.flat_likelihood) std::printf("prior recovery: %s\n", r.prior_recovery ? "pass" : "fail");
  if (!r.converged) {
    logLine("convergence flagged: max R-hat " + formatDouble(r.max_rhat));
    return kExitFlagged;
  }
  return kExitOk;
}

int cmdCalibrate(CutoffCalibration settings, const std::string& out, const CommonFlags& common) {
  settings.seed = common.seed;
  const CutoffCalibration cal = calibrateCutoff(settings, common.workers);
  writeJsonFile(out, toJson(cal));
  std::printf("cut-off (%.3g quantile of max|C|, n_mult=%d, n_mc=%d, %d replications) = %.4f\n", cal.level,
              cal.n_mult, cal.n_mc, cal.replications, cal.cutoff);
  return kExitOk;
}

void printSweepTable(const std::vector<CellResult>& cells) {
  std::printf("%5s %8s %8s %4s %6s %6s %8s %8s %5s %10s %10s %10s %10s\n", "cell", "nbar_lo", "nbar_hi", "D", "T", "p1",
              "sigma", "sig_rel", "fail", "p(<-5dB)", "p(in HDI)", "HDI len", "MSE");
  for (const auto& c : cells) {
    const auto& k = c.cell;
    std::printf("%5d %8.3g %8.3g %4d %6d %6.3g %8.3g %8.3g %5d", k.index, k.nbar_min, k.nbar_max, k.data_points,
                k.trials, k.p1, k.sigma_nbar, k.sigma_rel, c.failures());
    if (c.merit) {
      const auto& m = *c.merit;
      std::printf(" %10.3f %10.3f", m.p_success.front().mean, m.p_a1_in_hdi.front().mean);
      if (m.hdi_length.front().present) {
        std::printf(" %10.4f", m.hdi_length.front().mean);
      } else {
        std::printf(" %10s", "-");
      }
      std::printf(" %10.3g\n", m.mse.mean);
    } else {
      std::printf(" %10s\n", "(no merit)");
    }
  }
}

struct SweepFlags {
  std::string grid_path;
  std::string out_dir;
  std::string replay;
  bool full_scale = false;
  bool beta_literal = false;
  int bootstrap = 10000;
};

int cmdSweep(const SweepFlags& sf, ReconstructFlags f, CommonFlags common) {
  SweepGrid grid;
  ReconstructConfig rc;
  std::optional<std::string> cal_key;
  bool beta_literal = sf.beta_literal;
  int bootstrap = sf.bootstrap;
  if (!sf.replay.empty()) {
    const Json m = readJsonFile(sf.replay);
    checkSchema(m, schema::kManifest);
    grid = sweepGridFromJson(m.at("grid"));
    rc = reconstructConfigFromJson(m.at("reconstruction"));
    common.seed = m.at("seed").get<std::uint64_t>();
    beta_literal = m.at("beta_trials_plus_one").get<bool>();
    bootstrap = m.at("bootstrap_resamples").get<int>();
    if (m.at("calibration_key").is_string()) cal_key = m.at("calibration_key").get<std::string>();
    rc.options.detection.cutoff = rc.cutoff.value();
    rc.options.detection.low.workers = rc.options.detection.high.workers = common.workers;
  } else {
    if (sf.grid_path.empty()) throw std::invalid_argument("sweep: --grid or --replay is required");
    grid = sweepGridFromJson(readJsonFile(sf.grid_path));
    if (sf.full_scale) grid.replications = kFullScaleReplications;
    rc = resolveReconstruct(f, common, &cal_key);
  }

  SweepOptions opt;
  opt.reconstruction = rc.options;
  opt.seed = common.seed;
  opt.workers = common.workers;
  opt.bootstrap_resamples = bootstrap;
  opt.beta_trials_plus_one = beta_literal;
  opt.out_dir = sf.out_dir;
  opt.log = logLine;

  Json manifest{{"schema", schema::kManifest},
                {"tool_version", kToolVersion},
                {"grid", toJson(grid)},
                {"reconstruction", toJson(rc)},
                {"seed", common.seed},
                {"beta_trials_plus_one", beta_literal},
                {"bootstrap_resamples", bootstrap},
                {"started_utc", utcNow()}};
  manifest["calibration_key"] = cal_key ? Json(*cal_key) : Json(nullptr);
  Json cells = Json::array();
  for (const auto& c : grid.cells()) {
    Json seeds = Json::array();
    for (int r = 0; r < grid.replications; ++r) seeds.push_back(replicationSeed(common.seed, c.index, r));
    cells.push_back({{"cell", toJson(c)}, {"replication_seeds", seeds}});
  }
  manifest["cells"] = cells;
  writeJsonFile(fs::path(sf.out_dir) / "manifest.json", manifest);

  const std::vector<CellResult> results = runSweep(grid, opt);
  writeTextFileAtomic(fs::path(sf.out_dir) / "table.csv", sweepTableCsv(results));
  manifest["finished_utc"] = utcNow();
  writeJsonFile(fs::path(sf.out_dir) / "manifest.json", manifest);
  printSweepTable(results);

  bool flagged = false;
  for (const auto& c : results) {
    flagged = flagged || c.failures() > 0;
    for (const auto& r : c.records()) flagged = flagged || !r.converged;
  }
  return flagged ? kExitFlagged : kExitOk;
}

int cmdReport(const std::string& dir, std::optional<bool> beta_literal, std::optional<int> bootstrap) {
  const fs::path root(dir);
  const Json m = readJsonFile(root / "manifest.json");
  checkSchema(m, schema::kManifest);
  const SweepGrid grid = sweepGridFromJson(m.at("grid"));
  SweepOptions opt;
  opt.seed = m.at("seed").get<std::uint64_t>();
  opt.beta_trials_plus_one = beta_literal.value_or(m.at("beta_trials_plus_one").get<bool>());
  opt.bootstrap_resamples = bootstrap.value_or(m.at("bootstrap_resamples").get<int>());

  std::vector<CellResult> results;
  Json reports = Json::array();
  for (const auto& cell : grid.cells()) {
    const fs::path file = root / "cells" / ("cell_" + std::to_string(cell.index) + ".json");
    CellResult c;
    c.cell = cell;
    if (fs::exists(file)) {
      const Json saved = readJsonFile(file);
      checkSchema(saved, schema::kCell);
      for (const auto& r : saved.at("replications")) c.replications.push_back(replicationOutcomeFromJson(r));
      c.merit = cellMerit(grid, cell, c.replications, opt);
    } else {
      logLine("cell " + std::to_string(cell.index) + " has no results yet");
    }
    Json entry{{"cell", toJson(cell)}, {"failures", c.failures()}, {"completed", fs::exists(file)}};
    entry["merit"] = c.merit ? toJson(*c.merit) : Json(nullptr);
    reports.push_back(entry);
    results.push_back(std::move(c));
  }
  writeJsonFile(root / "report.json",
                {{"schema", schema::kMerit}, {"beta_trials_plus_one", opt.beta_trials_plus_one}, {"cells", reports}});
  writeTextFileAtomic(root / "table.csv", sweepTableCsv(results));
  printSweepTable(results);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detector tomography of the human visual system: simulation, reconstruction and design sweeps"};
  app.require_subcommand(1);
  CommonFlags common;
  auto addCommon = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Master seed");
    sub->add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);
  };

  std::string config_path, out_path;
  bool histogram = false;
  auto* sim = app.add_subcommand("simulate", "Simulate one 2AFC experiment");
  sim->add_option("--config", config_path, "Experiment config (qdt.experiment/1)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out_path, "Output simulation file")->required();
  sim->add_flag("--histogram", histogram, "Record the photon-number histogram per data point");
  addCommon(sim);

  std::string sim_path, out_dir;
  ReconstructFlags rflags;
  auto* rec = app.add_subcommand("reconstruct", "Detect n_max and reconstruct the accuracies");
  rec->add_option("--sim", sim_path, "Simulation file")->required()->check(CLI::ExistingFile);
  rec->add_option("--out-dir", out_dir, "Output directory")->required();
  addReconstructFlags(rec, rflags);
  addCommon(rec);

  CutoffCalibration cal;
  auto* calc = app.add_subcommand("calibrate", "Calibrate the |C| cut-off under the null");
  calc->add_option("--n-mult", cal.n_mult, "Multiplexes");
  calc->add_option("--n-mc", cal.n_mc, "Samples per chain");
  calc->add_option("--replications", cal.replications, "Monte Carlo replications (>= 500)");
  calc->add_option("--level", cal.level, "Quantile of max|C| used as cut-off");
  calc->add_option("--shape-a", cal.shape.a, "Extension prior shape a");
  calc->add_option("--shape-b", cal.shape.b, "Extension prior shape b");
  calc->add_option("--out", out_path, "Output calibration file")->required();
  addCommon(calc);

  SweepFlags sflags;
  ReconstructFlags sweep_rflags;
  auto* sw = app.add_subcommand("sweep", "Replicated parameter sweep");
  sw->add_option("--grid", sflags.grid_path, "Sweep grid (qdt.sweep-grid/1)")->check(CLI::ExistingFile);
  sw->add_option("--out-dir", sflags.out_dir, "Output directory (checkpoints, table, manifest)")->required();
  sw->add_option("--replay", sflags.replay, "Re-run the sweep described by a manifest")->check(CLI::ExistingFile);
  sw->add_flag("--full-scale", sflags.full_scale, "Use 100 replications per cell");
  sw->add_flag("--beta-literal", sflags.beta_literal, "Use the beta(k+1, n+1) success posterior");
  sw->add_option("--bootstrap", sflags.bootstrap, "Bootstrap resamples")->check(CLI::PositiveNumber);
  addReconstructFlags(sw, sweep_rflags);
  addCommon(sw);

  std::string report_dir;
  bool report_literal = false;
  std::optional<int> report_bootstrap;
  auto* rep = app.add_subcommand("report", "Recompute merit tables from a sweep directory");
  rep->add_option("dir", report_dir, "Sweep output directory")->required()->check(CLI::ExistingDirectory);
  auto* lit = rep->add_flag("--beta-literal", report_literal, "Use the beta(k+1, n+1) success posterior");
  rep->add_option("--bootstrap", report_bootstrap, "Bootstrap resamples")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }
  try {
    if (*sim) return cmdSimulate(config_path, out_path, histogram, common);
    if (*rec) return cmdReconstruct(sim_path, out_dir, rflags, common);
    if (*calc) return cmdCalibrate(cal, out_path, common);
    if (*sw) return cmdSweep(sflags, sweep_rflags, common);
    if (*rep) {
      std::optional<bool> literal;
      if (lit->count() > 0) literal = report_literal;
      return cmdReport(report_dir, literal, report_bootstrap);
    }
  } catch (const std::exception& e) {
    std::cerr << "qdt: error: " << e.what() << std::endl;
    return kExitError;
  }
  return kExitError;
}
