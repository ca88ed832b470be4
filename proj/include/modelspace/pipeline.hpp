#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modelspace/attribution.hpp"
#include "modelspace/clustering.hpp"
#include "modelspace/evaluation.hpp"
#include "modelspace/model_space.hpp"
#include "modelspace/svcca.hpp"

namespace modelspace {

struct RunConfig {
  std::filesystem::path probe;                // probe manifest (probe.json)
  std::vector<std::filesystem::path> models;  // bundle directories
  AttributionMethod method;
  AttributionMode mode = AttributionMode::SinglePass;
  std::size_t probe_size = 0;  // 0 keeps the whole probe
  std::uint64_t seed = 0;      // probe sampling seed
  std::optional<std::filesystem::path> oracle;
  std::filesystem::path output_dir = "out";
  std::size_t threads = 1;

  // Downstream knobs.
  Linkage linkage = Linkage::Average;
  Dissimilarity dissimilarity = Dissimilarity::Inverse;
  double variance_threshold = kDefaultVarianceThreshold;
  std::size_t k_rel = 5;
  std::size_t exact_cap = 512;
  CpcNormalization cpc_normalization = CpcNormalization::ModelCount;
  std::optional<std::filesystem::path> matrix;  // precomputed matrix JSON

  // Throws Error(InvalidArgument) on the first bad field.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // SHA-256 of to_json() without thread count and output directory, which
  // do not influence any numeric result.
  std::string hash() const;
};

// Probe after sampling plus every model, loaded and validated.
struct Workspace {
  RunConfig config;
  ProbeSet probe;
  std::vector<ModelSpec> models;
};

Workspace open_workspace(const RunConfig& config);

// Metadata block embedded in every output file.
nlohmann::json output_metadata(const RunConfig& config, const std::string& probe_checksum);
std::string output_comment(const RunConfig& config, const std::string& probe_checksum);

// Cache file for (model fingerprint, probe checksum, method, epsilon, mode).
std::filesystem::path attribution_cache_path(const RunConfig& config, const ModelSpec& model,
                                             const std::string& probe_checksum);

struct AttributeReport {
  std::vector<AttributionSet> sets;  // config model order, float32-rounded
  std::uint64_t passes = 0;          // propagations spent in this run
  std::size_t cache_hits = 0;
};

// Attribution sets for every model, reusing valid cache files.
AttributeReport cmd_attribute(const RunConfig& config);
AttributeReport attribute_models(const Workspace& ws);

struct AffinityReport {
  AffinityMatrix matrix;
  std::uint64_t passes = 0;
  std::size_t cache_hits = 0;
  std::filesystem::path csv;
  std::filesystem::path json;
};

// Writes affinity.csv (similarity), distance.csv and affinity.json.
AffinityReport cmd_affinity(const RunConfig& config);

// Ranked sources for `target`; uses config.matrix when given, otherwise the
// affinity matrix of config.models. Writes rank_<target>.csv.
std::vector<RankedSource> cmd_rank(const RunConfig& config, const std::string& target);

struct InsertReport {
  AffinityMatrix matrix;
  std::size_t new_distances = 0;
  std::uint64_t passes = 0;
  RunConfig updated_config;  // config.models plus the new bundle
};

// Extends output_dir/affinity.json (written by cmd_affinity for the same
// config) with one model; only the N new distances are computed. Output
// files are rewritten as if cmd_affinity ran on the updated config.
InsertReport cmd_insert(const RunConfig& config, const std::filesystem::path& new_model);

struct EvalReport {
  RetrievalCurves curves;
  std::size_t k_rel = 0;
  bool clamped = false;
  double random_baseline = 0.0;  // expected P@K of a random ranking
  std::optional<double> pearson;   // estimate vs oracle matrix, when given
  std::optional<double> spearman;
  nlohmann::json to_json() const;
};

// P@K / R@K of the affinity ranking against config.oracle (a ranking file
// or a matrix JSON). Writes precision.csv, recall.csv and eval.json.
EvalReport cmd_eval(const RunConfig& config);

// SVCCA correlation matrix over config.models; writes svcca.csv/json.
LabeledMatrix cmd_svcca(const RunConfig& config);

// Clustering of the affinity matrix (or config.matrix); writes tree.nwk and
// tree.txt.
Dendrogram cmd_tree(const RunConfig& config);

// CPC of the SVCCA matrix (or config.matrix) against the oracle ranking.
CurvePoints cmd_cpc(const RunConfig& config);

struct GradCheckEntry {
  std::string model_id;
  std::size_t image_index = 0;
  double relative_error = 0.0;  // ||g - fd|| / max(||g||, ||fd||)
  std::size_t coordinates = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_relative_error <= tolerance; }
};

// Central differences (h = 1e-5) of seed . R against backward() at the
// preprocessed probe images. Checks at most `coordinates` input entries per
// image (0 = all).
GradCheckReport gradient_check(const ModelSpec& model, const ProbeSet& probe,
                               std::size_t images, std::size_t coordinates, std::uint64_t seed);
GradCheckReport cmd_gradcheck(const RunConfig& config, std::size_t images = 2,
                              std::size_t coordinates = 64);

}  // namespace modelspace
