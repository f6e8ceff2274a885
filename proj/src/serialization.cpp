#include "qdt/serialization.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace qdt {
namespace fs = std::filesystem;

namespace {

const Json& req(const Json& j, const char* key, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(context + ": missing key '" + key + "'");
  return *it;
}

template <typename T>
T get(const Json& j, const char* key, const std::string& context) {
  try {
    return req(j, key, context).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
T getOr(const Json& j, const char* key, T fallback, const std::string& context) {
  return j.contains(key) ? get<T>(j, key, context) : fallback;
}

Json vectorToJson(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(doubleToJson(v(i)));
  return a;
}

Json vectorToJson(const Eigen::VectorXi& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vectorFromJson(const Json& j, const std::string& context) {
  if (!j.is_array()) throw FormatError(context + ": expected an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = doubleFromJson(j[i]);
  return v;
}

Json shapeToJson(const BetaShape& s) { return {{"a", s.a}, {"b", s.b}}; }

BetaShape shapeFromJson(const Json& j, const std::string& context) {
  checkKeys(j, {"a", "b"}, context);
  return {get<double>(j, "a", context), get<double>(j, "b", context)};
}

Json gridToJson(const Eigen::VectorXd& q) { return vectorToJson(q); }

}  // namespace

void checkKeys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw FormatError(context + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw FormatError(context + ": unknown key '" + item.key() + "'");
  }
}

void checkSchema(const Json& j, const char* expected) {
  if (!j.is_object() || !j.contains("schema")) throw FormatError(std::string("missing schema, expected ") + expected);
  const auto& s = j["schema"];
  if (!s.is_string() || s.get<std::string>() != expected) {
    throw FormatError("schema mismatch: expected " + std::string(expected) + ", found " + s.dump());
  }
}

Json readJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void writeTextFileAtomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void writeJsonFile(const fs::path& path, const Json& j) { writeTextFileAtomic(path, j.dump(2) + "\n"); }

std::string formatDouble(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

Json doubleToJson(double x) {
  if (std::isfinite(x)) return x;
  return formatDouble(x);
}

double doubleFromJson(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw FormatError("expected a number, found " + j.dump());
}

// ---------------------------------------------------------------------------

Json toJson(const SourceConfig& c) {
  return {{"nbar_min", c.nbar_min},
          {"nbar_max", c.nbar_max},
          {"data_points", c.data_points},
          {"trials", c.trials},
          {"sigma_nbar", vectorToJson(c.sigma_nbar)}};
}

SourceConfig sourceFromJson(const Json& j) {
  const std::string ctx = "source";
  checkKeys(j, {"nbar_min", "nbar_max", "data_points", "trials", "sigma_nbar", "sigma_rel"}, ctx);
  const double lo = get<double>(j, "nbar_min", ctx);
  const double hi = getOr<double>(j, "nbar_max", lo, ctx);
  const int D = get<int>(j, "data_points", ctx);
  const int T = get<int>(j, "trials", ctx);
  if (j.contains("sigma_nbar") && j.contains("sigma_rel")) throw FormatError(ctx + ": give sigma_nbar or sigma_rel, not both");
  SourceConfig c;
  if (j.contains("sigma_rel")) {
    c = SourceConfig::withRelativeNoise(lo, hi, D, T, get<double>(j, "sigma_rel", ctx));
  } else if (j.contains("sigma_nbar") && j["sigma_nbar"].is_array()) {
    c = SourceConfig::withUniformNoise(lo, hi, D, T);
    c.sigma_nbar = vectorFromJson(j["sigma_nbar"], ctx + ".sigma_nbar");
  } else {
    c = SourceConfig::withUniformNoise(lo, hi, D, T, getOr<double>(j, "sigma_nbar", 0.0, ctx));
  }
  c.validate();
  return c;
}

Json toJson(const PerceptionModel& m) {
  if (m.p1()) return {{"p1", *m.p1()}, {"n_max", m.nMax()}};
  return {{"accuracies", vectorToJson(m.accuracies())}};
}

PerceptionModel modelFromJson(const Json& j, double cover_nbar) {
  const std::string ctx = "model";
  checkKeys(j, {"p1", "n_max", "accuracies"}, ctx);
  if (j.contains("accuracies")) {
    if (j.contains("p1") || j.contains("n_max")) throw FormatError(ctx + ": accuracies excludes p1 and n_max");
    return PerceptionModel::fromAccuracies(vectorFromJson(j["accuracies"], ctx + ".accuracies"));
  }
  const double p1 = get<double>(j, "p1", ctx);
  if (j.contains("n_max")) return PerceptionModel::binomial(p1, get<int>(j, "n_max", ctx));
  return PerceptionModel::binomialCovering(p1, cover_nbar);
}

ExperimentConfig experimentFromJson(const Json& j) {
  checkSchema(j, schema::kExperiment);
  checkKeys(j, {"schema", "source", "model"}, "experiment");
  SourceConfig source = sourceFromJson(req(j, "source", "experiment"));
  const double cover = source.data_points == 1 ? source.nbar_min : source.nbar_max;
  return {source, modelFromJson(req(j, "model", "experiment"), cover)};
}

Json toJson(const ExperimentConfig& c) {
  return {{"schema", schema::kExperiment}, {"source", toJson(c.source)}, {"model", toJson(c.model)}};
}

Json toJson(const SimulationResult& r) {
  Json j{{"schema", schema::kSimulation},
         {"source", toJson(r.config)},
         {"model", toJson(r.model)},
         {"seed", r.seed},
         {"sigma", vectorToJson(r.sigma)}};
  if (!r.photon_histogram.empty()) j["photon_histogram"] = r.photon_histogram;
  return j;
}

SimulationResult simulationFromJson(const Json& j) {
  const std::string ctx = "simulation";
  checkSchema(j, schema::kSimulation);
  checkKeys(j, {"schema", "source", "model", "seed", "sigma", "photon_histogram"}, ctx);
  SourceConfig source = sourceFromJson(req(j, "source", ctx));
  const double cover = source.data_points == 1 ? source.nbar_min : source.nbar_max;
  SimulationResult r{source, modelFromJson(req(j, "model", ctx), cover), get<std::uint64_t>(j, "seed", ctx), {}, {}};
  const auto sigma = get<std::vector<int>>(j, "sigma", ctx);
  if (static_cast<int>(sigma.size()) != source.data_points) throw FormatError(ctx + ": sigma length does not match D");
  r.sigma = Eigen::Map<const Eigen::VectorXi>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  for (int s : sigma) {
    if (s < 0 || s > source.trials) throw FormatError(ctx + ": sigma entry outside [0, T]");
  }
  if (j.contains("photon_histogram")) r.photon_histogram = get<std::vector<std::vector<long>>>(j, "photon_histogram", ctx);
  return r;
}

// ---------------------------------------------------------------------------

Json toJson(const McmcConfig& c) {
  return {{"n_chains", c.n_chains},
          {"n_iter", c.n_iter},
          {"n_warmup", c.n_warmup},
          {"n_thin", c.n_thin},
          {"n_mult", c.n_mult},
          {"target_acceptance", c.target_acceptance},
          {"adapt_decay", c.adapt_decay},
          {"initial_log_step", c.initial_log_step},
          {"rhat_threshold", c.rhat_threshold},
          {"flat_likelihood", c.flat_likelihood}};
}

McmcConfig mcmcFromJson(const Json& j, const McmcConfig& d) {
  const std::string ctx = "mcmc";
  checkKeys(j,
            {"n_chains", "n_iter", "n_warmup", "n_thin", "n_mult", "target_acceptance", "adapt_decay",
             "initial_log_step", "rhat_threshold", "flat_likelihood"},
            ctx);
  McmcConfig c = d;
  c.n_chains = getOr(j, "n_chains", d.n_chains, ctx);
  c.n_iter = getOr(j, "n_iter", d.n_iter, ctx);
  c.n_warmup = getOr(j, "n_warmup", d.n_warmup, ctx);
  c.n_thin = getOr(j, "n_thin", d.n_thin, ctx);
  c.n_mult = getOr(j, "n_mult", d.n_mult, ctx);
  c.target_acceptance = getOr(j, "target_acceptance", d.target_acceptance, ctx);
  c.adapt_decay = getOr(j, "adapt_decay", d.adapt_decay, ctx);
  c.initial_log_step = getOr(j, "initial_log_step", d.initial_log_step, ctx);
  c.rhat_threshold = getOr(j, "rhat_threshold", d.rhat_threshold, ctx);
  c.flat_likelihood = getOr(j, "flat_likelihood", d.flat_likelihood, ctx);
  c.validate();
  return c;
}

Json toJson(const ReconstructConfig& c) {
  const auto& d = c.options.detection;
  Json j{{"schema", schema::kReconstructConfig},
         {"low", toJson(d.low)},
         {"high", toJson(d.high)},
         {"start_n_max", d.start_n_max},
         {"hard_max", d.hard_max},
         {"extension", shapeToJson(d.extension)},
         {"quantile_grid", gridToJson(d.q_grid)},
         {"pmin_at_mode", d.pmin_at_mode},
         {"shape_hyper_prior", d.hyper == ShapeHyperPrior::kShifted ? "shifted" : "folded"},
         {"hdi_masses", c.options.hdi_masses},
         {"calibration_replications", c.calibration_replications},
         {"calibration_seed", c.calibration_seed},
         {"calibration_level", c.calibration_level}};
  j["cutoff"] = c.cutoff ? Json(*c.cutoff) : Json(nullptr);
  return j;
}

ReconstructConfig reconstructConfigFromJson(const Json& j) {
  const std::string ctx = "reconstruct config";
  checkSchema(j, schema::kReconstructConfig);
  checkKeys(j,
            {"schema", "low", "high", "start_n_max", "hard_max", "extension", "quantile_grid", "pmin_at_mode",
             "shape_hyper_prior", "hdi_masses", "cutoff", "calibration_replications", "calibration_seed", "calibration_level"},
            ctx);
  ReconstructConfig c;
  auto& d = c.options.detection;
  if (j.contains("low")) d.low = mcmcFromJson(j["low"], d.low);
  if (j.contains("high")) d.high = mcmcFromJson(j["high"], d.high);
  d.start_n_max = getOr(j, "start_n_max", d.start_n_max, ctx);
  d.hard_max = getOr(j, "hard_max", d.hard_max, ctx);
  if (j.contains("extension")) d.extension = shapeFromJson(j["extension"], ctx + ".extension");
  if (j.contains("quantile_grid")) d.q_grid = vectorFromJson(j["quantile_grid"], ctx + ".quantile_grid");
  d.pmin_at_mode = getOr(j, "pmin_at_mode", d.pmin_at_mode, ctx);
  if (j.contains("shape_hyper_prior")) {
    const std::string h = get<std::string>(j, "shape_hyper_prior", ctx);
    if (h != "shifted" && h != "folded") throw FormatError(ctx + ": shape_hyper_prior must be \"shifted\" or \"folded\"");
    d.hyper = h == "shifted" ? ShapeHyperPrior::kShifted : ShapeHyperPrior::kFolded;
  }
  c.options.hdi_masses = getOr(j, "hdi_masses", c.options.hdi_masses, ctx);
  if (j.contains("cutoff") && !j["cutoff"].is_null()) c.cutoff = get<double>(j, "cutoff", ctx);
  c.calibration_replications = getOr(j, "calibration_replications", c.calibration_replications, ctx);
  c.calibration_seed = getOr(j, "calibration_seed", c.calibration_seed, ctx);
  c.calibration_level = getOr(j, "calibration_level", c.calibration_level, ctx);
  return c;
}

Json toJson(const Interval& i) { return Json::array({doubleToJson(i.low), doubleToJson(i.high)}); }

Json toJson(const PosteriorSummary& s) {
  Json params = Json::array();
  for (const auto& p : s.parameters) {
    Json hdis = Json::array();
    for (const auto& h : p.hdis) hdis.push_back(toJson(h));
    params.push_back({{"name", p.name},
                      {"mode", doubleToJson(p.mode)},
                      {"mean", doubleToJson(p.mean)},
                      {"median", doubleToJson(p.median)},
                      {"hdi", hdis}});
  }
  return {{"hdi_masses", s.hdi_masses}, {"parameters", params}};
}

Json toJson(const DetectionStep& s) {
  return {{"n_max", s.n_max},           {"p_min", s.p_min},   {"stage", s.stage},
          {"n_iter", s.n_iter},         {"max_abs_c", doubleToJson(s.max_abs_c)},
          {"q_at_max", s.q_at_max},     {"max_rhat", doubleToJson(s.max_rhat)},
          {"accepted", s.accepted}};
}

Json toJson(const NmaxResult& r) {
  Json trace = Json::array();
  for (const auto& s : r.trace) trace.push_back(toJson(s));
  Json j{{"success", r.success}, {"n_max", r.n_max}, {"p_min", r.p_min}, {"trace", trace}};
  if (!r.success) j["failure"] = r.failure;
  return j;
}

Json toJson(const Reconstruction& r) {
  Json j{{"schema", schema::kReconstruction},
         {"tool_version", kToolVersion},
         {"detection", toJson(r.detection)},
         {"nbar_grid", vectorToJson(r.nbar_grid)},
         {"observed_A", vectorToJson(r.observed_A)}};
  if (r.ok()) {
    j["summary"] = toJson(r.summary);
    j["reconstructed_A"] = vectorToJson(r.reconstructed_A);
    j["r_sd"] = doubleToJson(r.r_sd);
    j["max_rhat"] = doubleToJson(r.max_rhat);
    j["converged"] = r.converged;
    j["prior_recovery"] = r.prior_recovery;
    if (r.mse) j["mse"] = doubleToJson(*r.mse);
  }
  if (r.model_A) j["model_A"] = vectorToJson(*r.model_A);
  return j;
}

// ---------------------------------------------------------------------------

std::string chainsToCsv(const ChainSet& chains) {
  std::ostringstream out;
  out << "side,multiplex,chain,iteration";
  for (const auto& name : chains.layout.names()) out << ',' << name;
  out << '\n';
  for (std::size_t m = 0; m < chains.multiplexes.size(); ++m) {
    const auto& mx = chains.multiplexes[m];
    for (int side = 0; side < 2; ++side) {
      const Eigen::MatrixXd& s = side == 0 ? mx.posterior : mx.prior;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        out << (side == 0 ? "posterior" : "prior") << ',' << m << ',';
        if (side == 0) {
          out << mx.chain_id(r) << ',' << mx.iteration(r);
        } else {
          out << "-1,-1";
        }
        for (Eigen::Index c = 0; c < s.cols(); ++c) out << ',' << formatDouble(s(r, c));
        out << '\n';
      }
    }
  }
  return out.str();
}

ChainSet chainsFromCsv(const std::string& text, const PriorSpec& spec, const McmcConfig& mcmc) {
  ChainSet cs;
  cs.layout = {spec.n_max, spec.with_extension};
  cs.spec = spec;
  cs.mcmc = mcmc;
  const int cols = cs.layout.cols();
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("chains: empty file");
  std::map<int, std::vector<std::vector<double>>> post, prior;
  std::map<int, std::vector<std::pair<int, int>>> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (static_cast<int>(f.size()) != 4 + cols) throw FormatError("chains: wrong column count");
    const int m = std::stoi(f[1]);
    std::vector<double> row(cols);
    for (int c = 0; c < cols; ++c) row[c] = std::stod(f[4 + c]);
    if (f[0] == "posterior") {
      post[m].push_back(std::move(row));
      ids[m].emplace_back(std::stoi(f[2]), std::stoi(f[3]));
    } else if (f[0] == "prior") {
      prior[m].push_back(std::move(row));
    } else {
      throw FormatError("chains: unknown side " + f[0]);
    }
  }
  auto toMatrix = [&](const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < cols; ++c) out(static_cast<Eigen::Index>(r), c) = rows[r][c];
    return out;
  };
  for (const auto& [m, rows] : post) {
    if (m != static_cast<int>(cs.multiplexes.size())) throw FormatError("chains: multiplex ids not contiguous");
    MultiplexChains mx;
    mx.posterior = toMatrix(rows);
    mx.prior = toMatrix(prior[m]);
    mx.chain_id.resize(static_cast<Eigen::Index>(rows.size()));
    mx.iteration.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      mx.chain_id(static_cast<Eigen::Index>(r)) = ids[m][r].first;
      mx.iteration(static_cast<Eigen::Index>(r)) = ids[m][r].second;
    }
    cs.multiplexes.push_back(std::move(mx));
  }
  return cs;
}

// ---------------------------------------------------------------------------

Json toJson(const CutoffCalibration& c) {
  Json draws = Json::array();
  for (double x : c.null_max_abs_c) draws.push_back(doubleToJson(x));
  return {{"schema", schema::kCalibration},
          {"key", c.key()},
          {"n_mult", c.n_mult},
          {"n_mc", c.n_mc},
          {"replications", c.replications},
          {"shape", shapeToJson(c.shape)},
          {"level", c.level},
          {"seed", c.seed},
          {"quantile_grid", gridToJson(c.q_grid)},
          {"cutoff", doubleToJson(c.cutoff)},
          {"null_max_abs_c", draws}};
}

CutoffCalibration calibrationFromJson(const Json& j) {
  const std::string ctx = "calibration";
  checkSchema(j, schema::kCalibration);
  checkKeys(j,
            {"schema", "key", "n_mult", "n_mc", "replications", "shape", "level", "seed", "quantile_grid", "cutoff",
             "null_max_abs_c"},
            ctx);
  CutoffCalibration c;
  c.n_mult = get<int>(j, "n_mult", ctx);
  c.n_mc = get<int>(j, "n_mc", ctx);
  c.replications = get<int>(j, "replications", ctx);
  c.shape = shapeFromJson(req(j, "shape", ctx), ctx + ".shape");
  c.level = get<double>(j, "level", ctx);
  c.seed = get<std::uint64_t>(j, "seed", ctx);
  c.q_grid = vectorFromJson(req(j, "quantile_grid", ctx), ctx + ".quantile_grid");
  c.cutoff = doubleFromJson(req(j, "cutoff", ctx));
  for (const auto& x : req(j, "null_max_abs_c", ctx)) c.null_max_abs_c.push_back(doubleFromJson(x));
  if (get<std::string>(j, "key", ctx) != c.key()) throw FormatError(ctx + ": key does not match the settings");
  return c;
}

CutoffCalibration loadOrCalibrate(const CutoffCalibration& settings, const fs::path& cache_dir, int workers) {
  const fs::path file = cache_dir / ("cutoff_" + settings.key() + ".json");
  if (fs::exists(file)) {
    try {
      CutoffCalibration cached = calibrationFromJson(readJsonFile(file));
      if (cached.key() == settings.key() &&
          static_cast<int>(cached.null_max_abs_c.size()) == cached.replications) {
        return cached;
      }
    } catch (const FormatError&) {
      // Stale or damaged cache entry: recompute and overwrite.
    }
  }
  CutoffCalibration result = calibrateCutoff(settings, workers);
  writeJsonFile(file, toJson(result));
  return result;
}

// ---------------------------------------------------------------------------

Json toJson(const SweepGrid& g) {
  return {{"schema", schema::kSweepGrid},      {"nbar_min", g.nbar_min},
          {"nbar_max", g.nbar_max},            {"data_points", g.data_points},
          {"trials", g.trials},                {"p1", g.p1},
          {"sigma_nbar", g.sigma_nbar},        {"sigma_rel", g.sigma_rel},
          {"replications", g.replications},    {"r_sd_thresholds", g.r_sd_thresholds},
          {"hdi_masses", g.hdi_masses},        {"hdi_exclusion", g.hdi_exclusion}};
}

SweepGrid sweepGridFromJson(const Json& j) {
  const std::string ctx = "sweep grid";
  checkSchema(j, schema::kSweepGrid);
  checkKeys(j,
            {"schema", "nbar_min", "nbar_max", "data_points", "trials", "p1", "sigma_nbar", "sigma_rel",
             "replications", "r_sd_thresholds", "hdi_masses", "hdi_exclusion"},
            ctx);
  SweepGrid g;
  g.nbar_min = getOr(j, "nbar_min", g.nbar_min, ctx);
  g.nbar_max = getOr(j, "nbar_max", g.nbar_max, ctx);
  g.data_points = getOr(j, "data_points", g.data_points, ctx);
  g.trials = getOr(j, "trials", g.trials, ctx);
  g.p1 = getOr(j, "p1", g.p1, ctx);
  g.sigma_nbar = getOr(j, "sigma_nbar", g.sigma_nbar, ctx);
  g.sigma_rel = getOr(j, "sigma_rel", g.sigma_rel, ctx);
  g.replications = getOr(j, "replications", g.replications, ctx);
  g.r_sd_thresholds = getOr(j, "r_sd_thresholds", g.r_sd_thresholds, ctx);
  g.hdi_masses = getOr(j, "hdi_masses", g.hdi_masses, ctx);
  g.hdi_exclusion = getOr(j, "hdi_exclusion", g.hdi_exclusion, ctx);
  g.validate();
  return g;
}

Json toJson(const SweepCell& c) {
  return {{"index", c.index},     {"nbar_min", c.nbar_min},     {"nbar_max", c.nbar_max},
          {"data_points", c.data_points}, {"trials", c.trials}, {"p1", c.p1},
          {"sigma_nbar", c.sigma_nbar},   {"sigma_rel", c.sigma_rel}};
}

Json toJson(const ReplicationRecord& r) {
  Json hdis = Json::array();
  for (const auto& h : r.hdi_a1) hdis.push_back(toJson(h));
  return {{"r_sd", doubleToJson(r.r_sd)}, {"mode_a1", r.mode_a1}, {"hdi_a1", hdis},
          {"mse", doubleToJson(r.mse)},   {"n_max", r.n_max},     {"converged", r.converged}};
}

ReplicationRecord replicationRecordFromJson(const Json& j) {
  const std::string ctx = "replication record";
  checkKeys(j, {"r_sd", "mode_a1", "hdi_a1", "mse", "n_max", "converged"}, ctx);
  ReplicationRecord r;
  r.r_sd = doubleFromJson(req(j, "r_sd", ctx));
  r.mode_a1 = get<double>(j, "mode_a1", ctx);
  for (const auto& h : req(j, "hdi_a1", ctx)) {
    if (!h.is_array() || h.size() != 2) throw FormatError(ctx + ": HDI must be a pair");
    r.hdi_a1.push_back({doubleFromJson(h[0]), doubleFromJson(h[1])});
  }
  r.mse = doubleFromJson(req(j, "mse", ctx));
  r.n_max = get<int>(j, "n_max", ctx);
  r.converged = get<bool>(j, "converged", ctx);
  return r;
}

Json toJson(const ReplicationOutcome& o) {
  Json j{{"replication", o.replication}, {"seed", o.seed}, {"ok", o.ok}};
  if (o.ok) {
    j["record"] = toJson(o.record);
  } else {
    j["failure"] = o.failure;
  }
  return j;
}

ReplicationOutcome replicationOutcomeFromJson(const Json& j) {
  const std::string ctx = "replication";
  checkKeys(j, {"replication", "seed", "ok", "record", "failure"}, ctx);
  ReplicationOutcome o;
  o.replication = get<int>(j, "replication", ctx);
  o.seed = get<std::uint64_t>(j, "seed", ctx);
  o.ok = get<bool>(j, "ok", ctx);
  if (o.ok) {
    o.record = replicationRecordFromJson(req(j, "record", ctx));
  } else {
    o.failure = get<std::string>(j, "failure", ctx);
  }
  return o;
}

Json toJson(const ProbabilityEstimate& e) {
  return {{"successes", e.successes}, {"trials", e.trials}, {"posterior", {e.post_a, e.post_b}},
          {"mean", e.mean},           {"low", e.low},       {"high", e.high},
          {"bootstrap_se", e.bootstrap_se}};
}

Json toJson(const MeanSdEstimate& e) {
  if (!e.present) return {{"present", false}, {"used", e.used}};
  return {{"present", true}, {"used", e.used},       {"mean", e.mean},
          {"sd", e.sd},      {"mean_se", e.mean_se}, {"sd_se", e.sd_se}};
}

Json toJson(const MeritReport& m) {
  Json success = Json::array(), in_hdi = Json::array(), lengths = Json::array();
  for (std::size_t t = 0; t < m.p_success.size(); ++t) {
    Json e = toJson(m.p_success[t]);
    e["threshold_db"] = m.r_sd_thresholds[t];
    success.push_back(e);
  }
  for (std::size_t k = 0; k < m.p_a1_in_hdi.size(); ++k) {
    Json e = toJson(m.p_a1_in_hdi[k]);
    e["mass"] = m.hdi_masses[k];
    in_hdi.push_back(e);
    Json l = toJson(m.hdi_length[k]);
    l["mass"] = m.hdi_masses[k];
    lengths.push_back(l);
  }
  return {{"schema", schema::kMerit},
          {"replications", m.replications},
          {"p_success", success},
          {"p_a1_in_hdi", in_hdi},
          {"hdi_length", lengths},
          {"mse", toJson(m.mse)},
          {"bootstrap", {{"resamples", m.bootstrap_resamples}, {"seed", m.bootstrap_seed}}}};
}

std::string sweepTableCsv(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  std::vector<double> thresholds, masses;
  for (const auto& c : cells) {
    if (c.merit) {
      thresholds = c.merit->r_sd_thresholds;
      masses = c.merit->hdi_masses;
      break;
    }
  }
  out << "cell,nbar_min,nbar_max,data_points,trials,p1,sigma_nbar,sigma_rel,replications,failures";
  for (double t : thresholds) {
    const std::string s = formatDouble(t);
    out << ",p_success" << s << ",p_success" << s << "_low,p_success" << s << "_high,p_success" << s << "_se";
  }
  for (double mass : masses) {
    const std::string s = formatDouble(mass);
    out << ",p_in_hdi" << s << ",p_in_hdi" << s << "_low,p_in_hdi" << s << "_high,p_in_hdi" << s << "_se";
    out << ",hdi_len" << s << "_mean,hdi_len" << s << "_sd,hdi_len" << s << "_mean_se,hdi_len" << s << "_used";
  }
  out << ",mse_mean,mse_sd,mse_mean_se\n";
  auto opt = [](bool present, double v) { return present ? formatDouble(v) : std::string(); };
  for (const auto& c : cells) {
    const auto& k = c.cell;
    out << k.index << ',' << formatDouble(k.nbar_min) << ',' << formatDouble(k.nbar_max) << ',' << k.data_points << ','
        << k.trials << ',' << formatDouble(k.p1) << ',' << formatDouble(k.sigma_nbar) << ','
        << formatDouble(k.sigma_rel) << ',' << c.replications.size() << ',' << c.failures();
    const bool m = c.merit.has_value();
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const ProbabilityEstimate e = m ? c.merit->p_success[t] : ProbabilityEstimate{};
      out << ',' << opt(m, e.mean) << ',' << opt(m, e.low) << ',' << opt(m, e.high) << ',' << opt(m, e.bootstrap_se);
    }
    for (std::size_t i = 0; i < masses.size(); ++i) {
      const ProbabilityEstimate e = m ? c.merit->p_a1_in_hdi[i] : ProbabilityEstimate{};
      out << ',' << opt(m, e.mean) << ',' << opt(m, e.low) << ',' << opt(m, e.high) << ',' << opt(m, e.bootstrap_se);
      const MeanSdEstimate l = m ? c.merit->hdi_length[i] : MeanSdEstimate{};
      out << ',' << opt(l.present, l.mean) << ',' << opt(l.present, l.sd) << ',' << opt(l.present, l.mean_se) << ','
          << (m ? std::to_string(l.used) : std::string());
    }
    out << ',' << opt(m, m ? c.merit->mse.mean : 0.0) << ',' << opt(m, m ? c.merit->mse.sd : 0.0) << ','
        << opt(m, m ? c.merit->mse.mean_se : 0.0) << '\n';
  }
  return out.str();
}

}  // namespace qdt
