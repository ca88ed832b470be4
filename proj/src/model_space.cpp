#include "modelspace/model_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "modelspace/error.hpp"
#include "modelspace/parallel.hpp"

namespace modelspace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::Similarity: return "similarity";
    case MatrixKind::Distance: return "distance";
    case MatrixKind::Svcca: return "svcca";
  }
  return "unknown";
}

MatrixKind matrix_kind_from_string(std::string_view name) {
  if (name == "similarity") return MatrixKind::Similarity;
  if (name == "distance") return MatrixKind::Distance;
  if (name == "svcca") return MatrixKind::Svcca;
  fail(ErrorKind::ParseError, "unknown matrix kind '" + std::string(name) + "'");
}

std::size_t LabeledMatrix::index_of(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) fail(ErrorKind::UnknownModel, "model '" + id + "' not in matrix");
  return static_cast<std::size_t>(it - ids.begin());
}

void LabeledMatrix::validate() const {
  if (values.size() != ids.size() * ids.size()) {
    fail(ErrorKind::ShapeMismatch, "matrix has " + std::to_string(values.size()) +
                                       " values for " + std::to_string(ids.size()) + " ids");
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    fail(ErrorKind::InvalidArgument, "duplicate model ids in matrix");
  }
}

CosineResult cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::ShapeMismatch,
         "cosine of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < 1e-12 || nb < 1e-12) return {0.0, true};
  return {std::clamp(dot / (na * nb), -1.0, 1.0), false};
}

DistanceResult distance(const AttributionSet& a, const AttributionSet& b) {
  if (a.probe_checksum != b.probe_checksum || a.size() != b.size() ||
      a.probe_shape != b.probe_shape) {
    fail(ErrorKind::ProbeMismatch,
         "attribution sets of '" + a.model_id + "' and '" + b.model_id + "' use different probes");
  }
  if (!(a.method == b.method)) {
    fail(ErrorKind::MethodMismatch,
         "attribution sets of '" + a.model_id + "' and '" + b.model_id + "' use different methods");
  }
  if (a.size() == 0) fail(ErrorKind::EmptyProbe, "attribution sets are empty");
  DistanceResult r;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto c = cosine_similarity(a.maps[k], b.maps[k]);
    r.cosine_sum += c.value;
    r.degenerate_pairs += c.degenerate ? 1 : 0;
  }
  if (r.cosine_sum <= 1e-9) {
    r.infinite = true;
    r.distance = kInfiniteDistance;
  } else {
    r.distance = static_cast<double>(a.size()) / r.cosine_sum;
  }
  return r;
}

double AffinityMatrix::distance(std::size_t i, std::size_t j) const {
  if (infinite[i * size() + j]) return kInfiniteDistance;
  return 1.0 / similarity.at(i, j);
}

LabeledMatrix AffinityMatrix::distance_matrix() const {
  LabeledMatrix d;
  d.ids = similarity.ids;
  d.kind = MatrixKind::Distance;
  d.metadata = similarity.metadata;
  d.values.resize(similarity.values.size());
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = 0; j < size(); ++j) d.at(i, j) = distance(i, j);
  }
  return d;
}

namespace {

json set_metadata(const AttributionSet& s) {
  return {{"method", std::string(to_string(s.method.kind))},
          {"epsilon", s.method.epsilon},
          {"mode", std::string(to_string(s.mode))},
          {"probe_checksum", s.probe_checksum},
          {"n_probe", s.size()}};
}

void check_unique_ids(const std::vector<std::string>& ids) {
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    fail(ErrorKind::InvalidArgument, "model ids must be unique");
  }
}

struct PairValue {
  double similarity = 0.0;
  bool infinite = false;
  std::size_t degenerate = 0;
};

PairValue pair_value(const AttributionSet& a, const AttributionSet& b) {
  const auto r = distance(a, b);
  return {r.mean_similarity(a.size()), r.infinite, r.degenerate_pairs};
}

}  // namespace

AffinityMatrix affinity_matrix(const std::vector<AttributionSet>& sets, std::size_t threads) {
  if (sets.size() < 2) fail(ErrorKind::TooFewModels, "affinity matrix needs >= 2 models");
  const std::size_t n = sets.size();
  AffinityMatrix m;
  for (const auto& s : sets) m.similarity.ids.push_back(s.model_id);
  check_unique_ids(m.similarity.ids);
  m.similarity.kind = MatrixKind::Similarity;
  m.similarity.metadata = set_metadata(sets.front());
  m.similarity.values.assign(n * n, 1.0);
  m.infinite.assign(n * n, false);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<PairValue> results(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    results[p] = pair_value(sets[pairs[p].first], sets[pairs[p].second]);
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    m.similarity.at(i, j) = m.similarity.at(j, i) = results[p].similarity;
    m.infinite[i * n + j] = m.infinite[j * n + i] = results[p].infinite;
    m.degenerate_pairs += results[p].degenerate;
  }
  return m;
}

InsertResult insert_model(const AffinityMatrix& matrix,
                          const std::vector<AttributionSet>& existing,
                          const AttributionSet& added, std::size_t threads) {
  const std::size_t n = matrix.size();
  if (existing.size() != n) {
    fail(ErrorKind::IdMismatch, "expected " + std::to_string(n) + " cached attribution sets");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (existing[i].model_id != matrix.ids()[i]) {
      fail(ErrorKind::IdMismatch, "cached set '" + existing[i].model_id +
                                      "' does not match matrix id '" + matrix.ids()[i] + "'");
    }
  }
  InsertResult out;
  auto& m = out.matrix;
  m.similarity.ids = matrix.ids();
  m.similarity.ids.push_back(added.model_id);
  check_unique_ids(m.similarity.ids);
  m.similarity.kind = MatrixKind::Similarity;
  m.similarity.metadata = matrix.similarity.metadata;
  m.similarity.values.assign((n + 1) * (n + 1), 1.0);
  m.infinite.assign((n + 1) * (n + 1), false);
  m.degenerate_pairs = matrix.degenerate_pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m.similarity.at(i, j) = matrix.similarity.at(i, j);
      m.infinite[i * (n + 1) + j] = matrix.infinite[i * n + j];
    }
  }
  std::vector<PairValue> results(n);
  parallel_for(n, threads, [&](std::size_t i) { results[i] = pair_value(existing[i], added); });
  for (std::size_t i = 0; i < n; ++i) {
    m.similarity.at(i, n) = m.similarity.at(n, i) = results[i].similarity;
    m.infinite[i * (n + 1) + n] = m.infinite[n * (n + 1) + i] = results[i].infinite;
    m.degenerate_pairs += results[i].degenerate;
  }
  out.new_distances = n;
  return out;
}

const std::vector<RankedSource>& RankingTable::row(const std::string& target) const {
  const auto it = rows.find(target);
  if (it == rows.end()) fail(ErrorKind::UnknownModel, "no ranking for target '" + target + "'");
  return it->second;
}

std::size_t RankingTable::rank_of(const std::string& target, const std::string& source) const {
  for (const auto& r : row(target)) {
    if (r.id == source) return r.rank;
  }
  fail(ErrorKind::IncompleteTable,
       "source '" + source + "' missing from ranking of '" + target + "'");
}

std::vector<std::string> RankingTable::ordered_sources(const std::string& target) const {
  std::vector<std::string> out;
  for (const auto& r : row(target)) out.push_back(r.id);
  return out;
}

namespace {

std::vector<RankedSource> rank_row(const std::vector<std::string>& ids,
                                   const std::vector<double>& row_values, std::size_t self,
                                   bool ascending) {
  std::vector<RankedSource> out;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (j != self) out.push_back({ids[j], row_values[j], 0});
  }
  std::sort(out.begin(), out.end(), [ascending](const RankedSource& a, const RankedSource& b) {
    if (a.value != b.value) return ascending ? a.value < b.value : a.value > b.value;
    return a.id < b.id;
  });
  for (std::size_t r = 0; r < out.size(); ++r) out[r].rank = r + 1;
  return out;
}

}  // namespace

std::vector<RankedSource> rank_sources(const LabeledMatrix& matrix, const std::string& target) {
  const std::size_t t = matrix.index_of(target);
  const std::size_t n = matrix.size();
  std::vector<double> row(matrix.values.begin() + static_cast<std::ptrdiff_t>(t * n),
                          matrix.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
  for (double v : row) {
    if (std::isnan(v)) fail(ErrorKind::NonFiniteValue, "NaN in matrix row of '" + target + "'");
  }
  return rank_row(matrix.ids, row, t, matrix.kind == MatrixKind::Distance);
}

std::vector<RankedSource> rank_sources(const AffinityMatrix& matrix, const std::string& target) {
  const std::size_t t = matrix.similarity.index_of(target);
  std::vector<double> row(matrix.size());
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = matrix.distance(t, j);
  return rank_row(matrix.ids(), row, t, true);
}

RankingTable ranking_table(const LabeledMatrix& matrix) {
  RankingTable table;
  table.targets = matrix.ids;
  for (const auto& id : matrix.ids) table.rows[id] = rank_sources(matrix, id);
  return table;
}

RankingTable load_ranking_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::ParseError, path.string() + ": expected an object");
  RankingTable table;
  for (const auto& [target, list] : j.items()) {
    if (!list.is_array()) {
      fail(ErrorKind::ParseError, path.string() + ": ranking of '" + target + "' is not a list");
    }
    std::vector<RankedSource> row;
    std::set<std::string> seen;
    for (const auto& src : list) {
      const auto id = src.get<std::string>();
      if (id == target || !seen.insert(id).second) {
        fail(ErrorKind::ParseError, path.string() + ": bad source '" + id + "' for '" + target + "'");
      }
      row.push_back({id, static_cast<double>(row.size() + 1), row.size() + 1});
    }
    table.targets.push_back(target);
    table.rows[target] = std::move(row);
  }
  return table;
}

void save_ranking_file(const RankingTable& table, const fs::path& path) {
  json j = json::object();
  for (const auto& t : table.targets) j[t] = table.ordered_sources(t);
  write_text_file(path, j.dump(2) + "\n");
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string matrix_to_csv(const LabeledMatrix& m, const std::string& comment) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << '\n';
  for (const auto& id : m.ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << m.ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) os << ',' << format_double(m.at(i, j));
    os << '\n';
  }
  return os.str();
}

namespace {

json values_to_json(const LabeledMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double v = m.at(i, j);
      if (std::isfinite(v)) {
        row.push_back(v);
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> values_from_json(const json& rows, std::size_t n, bool null_is_inf) {
  if (!rows.is_array() || rows.size() != n) fail(ErrorKind::ParseError, "bad matrix values");
  std::vector<double> values;
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != n) fail(ErrorKind::ParseError, "bad matrix row");
    for (const auto& v : row) {
      if (v.is_null()) {
        if (!null_is_inf) fail(ErrorKind::ParseError, "null entry in matrix");
        values.push_back(kInfiniteDistance);
      } else {
        values.push_back(v.get<double>());
      }
    }
  }
  return values;
}

}  // namespace

json matrix_to_json(const LabeledMatrix& m) {
  return {{"kind", std::string(to_string(m.kind))},
          {"ids", m.ids},
          {"values", values_to_json(m)},
          {"metadata", m.metadata}};
}

LabeledMatrix matrix_from_json(const json& j) {
  LabeledMatrix m;
  try {
    m.ids = j.at("ids").get<std::vector<std::string>>();
    if (j.contains("similarity")) {
      return affinity_from_json(j).similarity;
    }
    m.kind = matrix_kind_from_string(j.at("kind").get<std::string>());
    m.values = values_from_json(j.at("values"), m.ids.size(), m.kind == MatrixKind::Distance);
    m.metadata = j.value("metadata", json::object());
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, std::string("matrix json: ") + e.what());
  }
  m.validate();
  return m;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
}

LabeledMatrix load_matrix_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  try {
    return matrix_from_json(json::parse(in));
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

json affinity_to_json(const AffinityMatrix& m) {
  json inf = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.size(); ++j) row.push_back(bool(m.infinite[i * m.size() + j]));
    inf.push_back(std::move(row));
  }
  return {{"kind", "affinity"},
          {"ids", m.ids()},
          {"similarity", values_to_json(m.similarity)},
          {"distance", values_to_json(m.distance_matrix())},
          {"infinite", std::move(inf)},
          {"degenerate_pairs", m.degenerate_pairs},
          {"metadata", m.similarity.metadata}};
}

AffinityMatrix affinity_from_json(const json& j) {
  AffinityMatrix m;
  try {
    m.similarity.ids = j.at("ids").get<std::vector<std::string>>();
    const std::size_t n = m.similarity.ids.size();
    m.similarity.kind = MatrixKind::Similarity;
    m.similarity.values = values_from_json(j.at("similarity"), n, false);
    m.similarity.metadata = j.value("metadata", json::object());
    m.degenerate_pairs = j.value("degenerate_pairs", std::size_t{0});
    m.infinite.assign(n * n, false);
    if (j.contains("infinite")) {
      const auto& inf = j.at("infinite");
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) m.infinite[i * n + k] = inf.at(i).at(k).get<bool>();
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, std::string("affinity json: ") + e.what());
  }
  m.similarity.validate();
  return m;
}

}  // namespace modelspace
