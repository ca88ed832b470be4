#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modelspace/attribution.hpp"
#include "modelspace/tensor.hpp"

namespace modelspace {

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

enum class MatrixKind { Similarity, Distance, Svcca };

std::string_view to_string(MatrixKind kind);
MatrixKind matrix_kind_from_string(std::string_view name);

// Square N x N matrix labelled by model ids (row-major values). Similarity and
// Svcca kinds rank larger-is-closer; Distance ranks smaller-is-closer.
struct LabeledMatrix {
  std::vector<std::string> ids;
  std::vector<double> values;
  MatrixKind kind = MatrixKind::Similarity;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const noexcept { return ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * ids.size() + j]; }
  // Index of `id`, or throws UnknownModel.
  std::size_t index_of(const std::string& id) const;
  void validate() const;
};

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // a norm was below 1e-12; value forced to 0
};

CosineResult cosine_similarity(const Tensor& a, const Tensor& b);

struct DistanceResult {
  double distance = 1.0;       // N_p / sum of cosines, or +inf
  double cosine_sum = 0.0;
  std::size_t degenerate_pairs = 0;
  bool infinite = false;       // cosine sum <= 1e-9

  double mean_similarity(std::size_t n) const { return cosine_sum / static_cast<double>(n); }
};

// d(m_i, m_j) = N_p / sum_k cos_sim(A_k^i, A_k^j). Requires both sets to come
// from the same probe and method.
DistanceResult distance(const AttributionSet& a, const AttributionSet& b);

// Pairwise model affinities. Stores mean cosine similarity s; the distance
// view is 1 / s (= N_p / sum) with +inf where the cosine sum is <= 1e-9.
struct AffinityMatrix {
  LabeledMatrix similarity;
  std::vector<bool> infinite;  // N x N, true where distance is +inf
  std::size_t degenerate_pairs = 0;

  std::size_t size() const noexcept { return similarity.size(); }
  const std::vector<std::string>& ids() const noexcept { return similarity.ids; }
  double distance(std::size_t i, std::size_t j) const;
  LabeledMatrix distance_matrix() const;
};

AffinityMatrix affinity_matrix(const std::vector<AttributionSet>& sets, std::size_t threads = 1);

struct InsertResult {
  AffinityMatrix matrix;
  std::size_t new_distances = 0;
};

// Appends one model to an existing matrix, computing only the N distances
// between the newcomer and the cached sets (given in matrix id order).
InsertResult insert_model(const AffinityMatrix& matrix,
                          const std::vector<AttributionSet>& existing,
                          const AttributionSet& added, std::size_t threads = 1);

struct RankedSource {
  std::string id;
  double value = 0.0;
  std::size_t rank = 0;  // 1-based
};

// Per-target ordered source lists, self excluded.
struct RankingTable {
  std::vector<std::string> targets;
  std::map<std::string, std::vector<RankedSource>> rows;

  const std::vector<RankedSource>& row(const std::string& target) const;
  // r_target^source: 1-based rank of `source` in the target's list.
  std::size_t rank_of(const std::string& target, const std::string& source) const;
  std::vector<std::string> ordered_sources(const std::string& target) const;
};

// Sources for `target`, closest first; ties broken by ascending id. For
// distance matrices +inf sorts last.
std::vector<RankedSource> rank_sources(const LabeledMatrix& matrix, const std::string& target);
std::vector<RankedSource> rank_sources(const AffinityMatrix& matrix, const std::string& target);
RankingTable ranking_table(const LabeledMatrix& matrix);

// Oracle ranking file: {"target": ["best source", "next", ...], ...}.
RankingTable load_ranking_file(const std::filesystem::path& path);
void save_ranking_file(const RankingTable& table, const std::filesystem::path& path);

// CSV: optional "# ..." comment line, header ",id1,id2,...", one row per id.
// Values use %.17g so the text round-trips bit-exactly; +inf prints "inf".
std::string matrix_to_csv(const LabeledMatrix& m, const std::string& comment = {});
nlohmann::json matrix_to_json(const LabeledMatrix& m);
LabeledMatrix matrix_from_json(const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);
LabeledMatrix load_matrix_json(const std::filesystem::path& path);

// Affinity JSON carries both views: {"ids", "similarity", "distance",
// "infinite", "metadata"}.
nlohmann::json affinity_to_json(const AffinityMatrix& m);
AffinityMatrix affinity_from_json(const nlohmann::json& j);

std::string format_double(double v);

}  // namespace modelspace
