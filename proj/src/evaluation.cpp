#include "modelspace/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "modelspace/error.hpp"
#include "modelspace/random.hpp"

namespace modelspace {

namespace {

std::size_t hits_at_k(const std::vector<std::string>& ranking,
                      const std::set<std::string>& relevant, std::size_t k) {
  if (k < 1 || k > ranking.size()) {
    fail(ErrorKind::BadK, "K=" + std::to_string(k) + " outside [1, " +
                              std::to_string(ranking.size()) + "]");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += relevant.count(ranking[i]);
  return hits;
}

}  // namespace

double precision_at_k(const std::vector<std::string>& ranking,
                      const std::set<std::string>& relevant, std::size_t k) {
  return static_cast<double>(hits_at_k(ranking, relevant, k)) / static_cast<double>(k);
}

double recall_at_k(const std::vector<std::string>& ranking,
                   const std::set<std::string>& relevant, std::size_t k) {
  if (relevant.empty()) fail(ErrorKind::EmptyRelevant, "relevant set is empty");
  return static_cast<double>(hits_at_k(ranking, relevant, k)) /
         static_cast<double>(relevant.size());
}

std::vector<double> upper_triangle(const LabeledMatrix& m) {
  std::vector<double> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) out.push_back(m.at(i, j));
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    fail(ErrorKind::InvalidArgument, "pearson needs two equal-length vectors of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      fail(ErrorKind::NonFiniteValue, "non-finite value in correlation input");
    }
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) fail(ErrorKind::ZeroVariance, "correlation input is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidArgument, "spearman needs equal lengths");
  return pearson(average_ranks(x), average_ranks(y));
}

namespace {

void check_same_ids(const LabeledMatrix& a, const LabeledMatrix& b) {
  if (a.ids != b.ids) fail(ErrorKind::IdMismatch, "matrices are over different model ids");
}

}  // namespace

double pearson(const LabeledMatrix& a, const LabeledMatrix& b) {
  check_same_ids(a, b);
  return pearson(upper_triangle(a), upper_triangle(b));
}

double spearman(const LabeledMatrix& a, const LabeledMatrix& b) {
  check_same_ids(a, b);
  return spearman(upper_triangle(a), upper_triangle(b));
}

std::map<std::string, double> priority(const RankingTable& oracle) {
  std::map<std::string, double> out;
  for (const auto& source : oracle.targets) {
    double sum = 0.0;
    std::size_t terms = 0;
    for (const auto& target : oracle.targets) {
      if (target == source) continue;
      sum += static_cast<double>(oracle.rank_of(target, source));
      ++terms;
    }
    if (terms == 0) fail(ErrorKind::IncompleteTable, "ranking table has a single task");
    out[source] = sum / static_cast<double>(terms);
  }
  return out;
}

std::string curve_to_csv(const CurvePoints& curve, const std::string& comment) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << '\n';
  os << curve.x_label << ',' << curve.y_label << '\n';
  for (const auto& [x, y] : curve.points) os << format_double(x) << ',' << format_double(y) << '\n';
  return os.str();
}

void write_curve_csv(const CurvePoints& curve, const std::filesystem::path& path,
                     const std::string& comment) {
  write_text_file(path, curve_to_csv(curve, comment));
}

CurvePoints cpc(const LabeledMatrix& correlations, const RankingTable& oracle,
                CpcNormalization normalization) {
  const std::size_t n = correlations.size();
  {
    std::vector<std::string> a = correlations.ids, b = oracle.targets;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) fail(ErrorKind::IdMismatch, "correlation matrix and oracle cover different tasks");
  }
  if (n < 2) fail(ErrorKind::TooFewModels, "CPC needs at least 2 tasks");
  std::vector<double> sums(n - 1, 0.0);
  std::vector<std::size_t> counts(n - 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      // r_j^i: rank of source i when transferred to target j.
      const std::size_t p = oracle.rank_of(correlations.ids[j], correlations.ids[i]);
      if (p < 1 || p > n - 1) fail(ErrorKind::IncompleteTable, "rank out of range");
      sums[p - 1] += correlations.at(i, j);
      ++counts[p - 1];
    }
  }
  CurvePoints curve{"priority", "correlation", {}};
  for (std::size_t p = 1; p < n; ++p) {
    double y = 0.0;
    if (normalization == CpcNormalization::ModelCount) {
      y = sums[p - 1] / static_cast<double>(n);
    } else if (counts[p - 1] > 0) {
      y = sums[p - 1] / static_cast<double>(counts[p - 1]);
    }
    curve.points.emplace_back(static_cast<double>(p), y);
  }
  return curve;
}

OracleRelevance build_relevance(const RankingTable& oracle, std::size_t k_rel) {
  if (k_rel < 1) fail(ErrorKind::BadK, "k_rel must be >= 1");
  OracleRelevance rel;
  rel.ranking = oracle;
  rel.k_rel = k_rel;
  for (const auto& target : oracle.targets) {
    const auto& row = oracle.row(target);
    if (row.size() < k_rel) rel.clamped = true;
    auto& set = rel.relevant[target];
    for (std::size_t i = 0; i < std::min(k_rel, row.size()); ++i) set.insert(row[i].id);
  }
  return rel;
}

OracleRelevance build_relevance(const LabeledMatrix& oracle, std::size_t k_rel) {
  return build_relevance(ranking_table(oracle), k_rel);
}

RetrievalCurves retrieval_curves(const RankingTable& estimate, const OracleRelevance& oracle) {
  if (estimate.targets.empty()) fail(ErrorKind::IncompleteTable, "empty estimate");
  RetrievalCurves out;
  std::size_t n_sources = 0;
  for (const auto& target : estimate.targets) {
    const auto ranking = estimate.ordered_sources(target);
    if (n_sources == 0) n_sources = ranking.size();
    if (ranking.size() != n_sources) {
      fail(ErrorKind::IncompleteTable, "rankings have different lengths");
    }
    const auto it = oracle.relevant.find(target);
    if (it == oracle.relevant.end()) {
      fail(ErrorKind::IdMismatch, "oracle has no relevance set for '" + target + "'");
    }
    auto& p = out.per_target_precision[target];
    auto& r = out.per_target_recall[target];
    for (std::size_t k = 1; k <= n_sources; ++k) {
      p.push_back(precision_at_k(ranking, it->second, k));
      r.push_back(recall_at_k(ranking, it->second, k));
    }
  }
  out.precision = {"K", "precision", {}};
  out.recall = {"K", "recall", {}};
  const double targets = static_cast<double>(estimate.targets.size());
  for (std::size_t k = 1; k <= n_sources; ++k) {
    double ps = 0.0, rs = 0.0;
    for (const auto& target : estimate.targets) {
      ps += out.per_target_precision[target][k - 1];
      rs += out.per_target_recall[target][k - 1];
    }
    out.precision.points.emplace_back(static_cast<double>(k), ps / targets);
    out.recall.points.emplace_back(static_cast<double>(k), rs / targets);
  }
  return out;
}

MonteCarloEstimate random_baseline_precision(std::size_t candidates, std::size_t relevant,
                                             std::size_t k, std::size_t trials,
                                             std::uint64_t seed) {
  if (relevant > candidates || k < 1 || k > candidates || trials < 2) {
    fail(ErrorKind::InvalidArgument, "bad random-baseline parameters");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(candidates);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Items [0, relevant) are the relevant ones; shuffle only the top-K slots.
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(candidates - i));
      std::swap(order[i], order[j]);
      hits += order[i] < relevant ? 1 : 0;
    }
    const double p = static_cast<double>(hits) / static_cast<double>(k);
    sum += p;
    sum_sq += p * p;
  }
  const double n = static_cast<double>(trials);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var), trials};
}

}  // namespace modelspace
