#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "modelspace/model_space.hpp"

namespace modelspace {

double precision_at_k(const std::vector<std::string>& ranking,
                      const std::set<std::string>& relevant, std::size_t k);
double recall_at_k(const std::vector<std::string>& ranking,
                   const std::set<std::string>& relevant, std::size_t k);

// Off-diagonal upper-triangle entries in (i < j) row-major order.
std::vector<double> upper_triangle(const LabeledMatrix& m);

double pearson(const std::vector<double>& x, const std::vector<double>& y);
// Rank correlation; tied values receive their average rank.
double spearman(const std::vector<double>& x, const std::vector<double>& y);
std::vector<double> average_ranks(const std::vector<double>& x);

// Matrix comparison over the upper triangle. Ids must match (same order).
// Infinite entries are rejected.
double pearson(const LabeledMatrix& a, const LabeledMatrix& b);
double spearman(const LabeledMatrix& a, const LabeledMatrix& b);

// p_i = mean over targets j != i of r_j^i.
std::map<std::string, double> priority(const RankingTable& oracle);

struct CurvePoints {
  std::string x_label;
  std::string y_label;
  std::vector<std::pair<double, double>> points;  // x strictly increasing
};

void write_curve_csv(const CurvePoints& curve, const std::filesystem::path& path,
                     const std::string& comment = {});
std::string curve_to_csv(const CurvePoints& curve, const std::string& comment = {});

enum class CpcNormalization {
  ModelCount,   // divide each bucket by N
  BucketCount,  // divide by the number of ordered pairs in the bucket
};

// Correlation-priority curve: y(p) = (1/N) sum over ordered pairs (i, j),
// i != j, with r_j^i = p of rho_ij, for p = 1 .. N-1.
CurvePoints cpc(const LabeledMatrix& correlations, const RankingTable& oracle,
                CpcNormalization normalization = CpcNormalization::ModelCount);

struct OracleRelevance {
  std::map<std::string, std::set<std::string>> relevant;  // per target
  RankingTable ranking;
  std::size_t k_rel = 5;
  bool clamped = false;  // fewer than k_rel sources were available
};

OracleRelevance build_relevance(const RankingTable& oracle, std::size_t k_rel = 5);
OracleRelevance build_relevance(const LabeledMatrix& oracle, std::size_t k_rel = 5);

struct RetrievalCurves {
  CurvePoints precision;  // macro-averaged P@K over targets
  CurvePoints recall;     // macro-averaged R@K over targets
  std::map<std::string, std::vector<double>> per_target_precision;  // index K-1
  std::map<std::string, std::vector<double>> per_target_recall;
};

// P@K and R@K for K = 1 .. (number of sources), macro-averaged over targets.
RetrievalCurves retrieval_curves(const RankingTable& estimate, const OracleRelevance& oracle);

struct MonteCarloEstimate {
  double mean = 0.0;
  double stddev = 0.0;  // of a single trial
  std::size_t trials = 0;
};

// P@K of uniformly random rankings of `candidates` sources of which
// `relevant` are relevant. Its expectation is relevant / candidates.
MonteCarloEstimate random_baseline_precision(std::size_t candidates, std::size_t relevant,
                                             std::size_t k, std::size_t trials,
                                             std::uint64_t seed);

}  // namespace modelspace
