#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdt/analysis.hpp"
#include "qdt/inference.hpp"
#include "qdt/nmax_detector.hpp"
#include "qdt/pipeline.hpp"
#include "qdt/trial_simulator.hpp"

namespace qdt {

using Json = nlohmann::json;

/// Schema tags written into every document's "schema" field.
namespace schema {
inline constexpr const char* kExperiment = "qdt.experiment/1";
inline constexpr const char* kSimulation = "qdt.simulation/1";
inline constexpr const char* kReconstructConfig = "qdt.reconstruct-config/1";
inline constexpr const char* kReconstruction = "qdt.reconstruction/1";
inline constexpr const char* kCalibration = "qdt.calibration/1";
inline constexpr const char* kSweepGrid = "qdt.sweep-grid/1";
inline constexpr const char* kCell = "qdt.sweep-cell/1";
inline constexpr const char* kManifest = "qdt.manifest/1";
inline constexpr const char* kMerit = "qdt.merit/1";
}  // namespace schema

/// Thrown for malformed documents: wrong schema, unknown or missing keys.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rejects keys outside `allowed`.
void checkKeys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context);
/// Checks the "schema" field.
void checkSchema(const Json& j, const char* expected);

Json readJsonFile(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline; parent directories are created.
void writeJsonFile(const std::filesystem::path& path, const Json& j);
/// Writes to a temporary sibling and renames, so readers never see a partial file.
void writeTextFileAtomic(const std::filesystem::path& path, const std::string& text);

/// Shortest round-trip decimal form.
std::string formatDouble(double x);
/// Non-finite values are stored as the strings "inf", "-inf", "nan".
Json doubleToJson(double x);
double doubleFromJson(const Json& j);

// Source and model ---------------------------------------------------------
// A source block may give "sigma_nbar" as a vector or a scalar, or
// "sigma_rel" as a fraction of each nominal intensity.
Json toJson(const SourceConfig& c);
SourceConfig sourceFromJson(const Json& j);
/// {"p1": x, "n_max": k} or {"accuracies": [...]}.
Json toJson(const PerceptionModel& m);
/// {"p1": x} alone builds a binomial model covering `cover_nbar`.
PerceptionModel modelFromJson(const Json& j, double cover_nbar);

struct ExperimentConfig {
  SourceConfig source;
  PerceptionModel model;
};
ExperimentConfig experimentFromJson(const Json& j);
Json toJson(const ExperimentConfig& c);

Json toJson(const SimulationResult& r);
SimulationResult simulationFromJson(const Json& j);

// MCMC and reconstruction ---------------------------------------------------
Json toJson(const McmcConfig& c);
/// Missing keys keep the values of `defaults`.
McmcConfig mcmcFromJson(const Json& j, const McmcConfig& defaults);

/// Reconstruction options plus how to obtain the cut-off.
struct ReconstructConfig {
  ReconstructionOptions options;
  /// Explicit cut-off; when absent the calibration below is used.
  std::optional<double> cutoff;
  int calibration_replications = 2000;
  std::uint64_t calibration_seed = 0;
  double calibration_level = 0.975;
};
Json toJson(const ReconstructConfig& c);
ReconstructConfig reconstructConfigFromJson(const Json& j);

Json toJson(const Interval& i);
Json toJson(const PosteriorSummary& s);
Json toJson(const DetectionStep& s);
Json toJson(const NmaxResult& r);  // trace and outcome, not the chains
Json toJson(const Reconstruction& r);

/// Columnar chain export: one row per retained sample,
/// side,multiplex,chain,iteration,alpha,beta,p_1..p_nmax[,p_ext].
/// Prior rows carry chain and iteration -1.
std::string chainsToCsv(const ChainSet& chains);
/// Parses chainsToCsv output back into per-multiplex sample matrices.
ChainSet chainsFromCsv(const std::string& text, const PriorSpec& spec, const McmcConfig& mcmc);

// Calibration ---------------------------------------------------------------
Json toJson(const CutoffCalibration& c);
CutoffCalibration calibrationFromJson(const Json& j);
/// Loads <cache_dir>/cutoff_<key>.json when present and matching, otherwise
/// calibrates and stores the result there.
CutoffCalibration loadOrCalibrate(const CutoffCalibration& settings, const std::filesystem::path& cache_dir,
                                  int workers);

// Sweeps --------------------------------------------------------------------
Json toJson(const SweepGrid& g);
SweepGrid sweepGridFromJson(const Json& j);
Json toJson(const SweepCell& c);
Json toJson(const ReplicationRecord& r);
ReplicationRecord replicationRecordFromJson(const Json& j);
Json toJson(const ReplicationOutcome& o);
ReplicationOutcome replicationOutcomeFromJson(const Json& j);
Json toJson(const ProbabilityEstimate& e);
Json toJson(const MeanSdEstimate& e);
Json toJson(const MeritReport& m);

/// One row per cell: cell parameters followed by every figure of merit.
std::string sweepTableCsv(const std::vector<CellResult>& cells);

}  // namespace qdt
