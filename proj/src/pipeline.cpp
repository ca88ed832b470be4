#include "modelspace/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "modelspace/checksum.hpp"
#include "modelspace/error.hpp"
#include "modelspace/random.hpp"

namespace modelspace {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cpc_norm_name(CpcNormalization n) {
  return n == CpcNormalization::ModelCount ? "model-count" : "bucket-count";
}

CpcNormalization cpc_norm_from(const std::string& s) {
  if (s == "model-count") return CpcNormalization::ModelCount;
  if (s == "bucket-count") return CpcNormalization::BucketCount;
  fail(ErrorKind::InvalidArgument, "unknown CPC normalization '" + s + "'");
}

json optional_path(const std::optional<fs::path>& p) {
  return p ? json(p->generic_string()) : json(nullptr);
}

std::string safe_name(const std::string& id) {
  std::string out = id;
  for (auto& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::string probe_checksum_of(const json& metadata) {
  if (metadata.contains("probe_checksum") && metadata["probe_checksum"].is_string()) {
    return metadata["probe_checksum"].get<std::string>();
  }
  return "unknown";
}

bool is_affinity_json(const json& j) { return j.value("kind", "") == "affinity"; }

bool is_matrix_json(const json& j) {
  return j.is_object() && j.contains("ids") && (j.contains("values") || j.contains("similarity"));
}

// Reorders a square matrix to the given id order.
LabeledMatrix reorder(const LabeledMatrix& m, const std::vector<std::string>& ids) {
  if (ids.size() != m.size()) fail(ErrorKind::IdMismatch, "matrices cover different models");
  LabeledMatrix out = m;
  out.ids = ids;
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(m.index_of(id));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) out.at(i, j) = m.at(idx[i], idx[j]);
  }
  return out;
}

RankingTable affinity_ranking(const AffinityMatrix& m) {
  RankingTable t;
  t.targets = m.ids();
  for (const auto& id : m.ids()) t.rows[id] = rank_sources(m, id);
  return t;
}

// Clustering input from a non-affinity matrix.
LabeledMatrix to_dissimilarity(const LabeledMatrix& m, Dissimilarity kind) {
  if (m.kind == MatrixKind::Distance) return m;
  AffinityMatrix a;
  a.similarity = m;
  a.infinite.assign(m.values.size(), false);
  if (kind == Dissimilarity::Inverse) {
    for (std::size_t k = 0; k < m.values.size(); ++k) a.infinite[k] = !(m.values[k] > 0.0);
  }
  return dissimilarity_matrix(a, kind);
}

void write_affinity_outputs(const RunConfig& config, AffinityMatrix& m, AffinityReport& report) {
  const std::string probe_checksum = probe_checksum_of(m.similarity.metadata);
  m.similarity.metadata["run"] = output_metadata(config, probe_checksum);
  const std::string comment = output_comment(config, probe_checksum);
  fs::create_directories(config.output_dir);
  report.csv = config.output_dir / "affinity.csv";
  report.json = config.output_dir / "affinity.json";
  write_text_file(report.csv, matrix_to_csv(m.similarity, comment));
  write_text_file(config.output_dir / "distance.csv", matrix_to_csv(m.distance_matrix(), comment));
  write_json_file(report.json, affinity_to_json(m));
}

std::string sha_of_run_key(const ModelSpec& model, const std::string& probe_checksum,
                           const RunConfig& config) {
  Sha256 h;
  h.update(model_fingerprint(model));
  h.update("|");
  h.update(probe_checksum);
  h.update("|");
  h.update(to_string(config.method.kind));
  h.update("|");
  h.update(format_double(config.method.epsilon));
  h.update("|");
  h.update(to_string(config.mode));
  return h.hex_digest();
}

bool cache_matches(const AttributionSet& set, const ModelSpec& model, const RunConfig& config,
                   const ProbeSet& probe, const std::string& probe_checksum) {
  return set.model_id == model.id && set.method == config.method && set.mode == config.mode &&
         set.probe_checksum == probe_checksum && set.maps.size() == probe.size() &&
         set.probe_shape == probe.shape;
}

}  // namespace

void RunConfig::validate() const {
  if (probe.empty()) fail(ErrorKind::InvalidArgument, "a probe manifest is required");
  if (models.empty()) fail(ErrorKind::InvalidArgument, "at least one model bundle is required");
  method.validate();
  if (threads < 1) fail(ErrorKind::InvalidArgument, "threads must be >= 1");
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0)) {
    fail(ErrorKind::InvalidArgument, "variance threshold must be in (0, 1]");
  }
  if (k_rel < 1) fail(ErrorKind::InvalidArgument, "k-rel must be >= 1");
  if (exact_cap < 1) fail(ErrorKind::InvalidArgument, "exact cap must be >= 1");
  if (output_dir.empty()) fail(ErrorKind::InvalidArgument, "output directory is required");
}

json RunConfig::to_json() const {
  json models_json = json::array();
  for (const auto& m : models) models_json.push_back(m.generic_string());
  return json{
      {"probe", probe.generic_string()},
      {"models", models_json},
      {"method", std::string(to_string(method.kind))},
      {"epsilon", method.epsilon},
      {"mode", std::string(to_string(mode))},
      {"probe_size", probe_size},
      {"seed", seed},
      {"oracle", optional_path(oracle)},
      {"output_dir", output_dir.generic_string()},
      {"threads", threads},
      {"linkage", std::string(to_string(linkage))},
      {"dissimilarity", std::string(to_string(dissimilarity))},
      {"variance_threshold", variance_threshold},
      {"k_rel", k_rel},
      {"exact_cap", exact_cap},
      {"cpc_normalization", cpc_norm_name(cpc_normalization)},
      {"matrix", optional_path(matrix)},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  try {
    RunConfig c;
    c.probe = j.at("probe").get<std::string>();
    for (const auto& m : j.at("models")) c.models.emplace_back(m.get<std::string>());
    c.method.kind = method_from_string(j.at("method").get<std::string>());
    c.method.epsilon = j.value("epsilon", kDefaultEpsilon);
    c.mode = mode_from_string(j.value("mode", std::string("single_pass")));
    c.probe_size = j.value("probe_size", std::size_t{0});
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("oracle") && !j["oracle"].is_null()) c.oracle = j["oracle"].get<std::string>();
    c.output_dir = j.value("output_dir", std::string("out"));
    c.threads = j.value("threads", std::size_t{1});
    c.linkage = linkage_from_string(j.value("linkage", std::string("average")));
    c.dissimilarity = dissimilarity_from_string(j.value("dissimilarity", std::string("inverse")));
    c.variance_threshold = j.value("variance_threshold", kDefaultVarianceThreshold);
    c.k_rel = j.value("k_rel", std::size_t{5});
    c.exact_cap = j.value("exact_cap", std::size_t{512});
    c.cpc_normalization = cpc_norm_from(j.value("cpc_normalization", std::string("model-count")));
    if (j.contains("matrix") && !j["matrix"].is_null()) c.matrix = j["matrix"].get<std::string>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, std::string("run config: ") + e.what());
  }
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("threads");
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

Workspace open_workspace(const RunConfig& config) {
  config.validate();
  Workspace ws;
  ws.config = config;
  ws.probe = load_probe(config.probe);
  if (config.probe_size > 0) ws.probe = sample_probe(ws.probe, config.probe_size, config.seed);
  for (const auto& path : config.models) ws.models.push_back(load_model(path));
  return ws;
}

json output_metadata(const RunConfig& config, const std::string& probe_checksum) {
  return json{{"config", config.to_json()},
              {"config_hash", config.hash()},
              {"probe_checksum", probe_checksum}};
}

std::string output_comment(const RunConfig& config, const std::string& probe_checksum) {
  return "config_hash=" + config.hash() + " probe_checksum=" + probe_checksum;
}

fs::path attribution_cache_path(const RunConfig& config, const ModelSpec& model,
                                const std::string& probe_checksum) {
  const std::string key = sha_of_run_key(model, probe_checksum, config);
  return config.output_dir / "cache" / (safe_name(model.id) + "-" + key.substr(0, 16) + ".attr");
}

AttributeReport attribute_models(const Workspace& ws) {
  const RunConfig& config = ws.config;
  const std::string probe_checksum = ws.probe.checksum();
  AttributeReport report;
  for (const auto& model : ws.models) {
    const fs::path path = attribution_cache_path(config, model, probe_checksum);
    if (fs::exists(path)) {
      try {
        AttributionSet cached = load_attribution_set(path);
        if (cache_matches(cached, model, config, ws.probe, probe_checksum)) {
          report.sets.push_back(std::move(cached));
          ++report.cache_hits;
          continue;
        }
      } catch (const Error&) {
        // Unreadable or stale entry; recompute and overwrite.
      }
    }
    AttributeOptions options;
    options.mode = config.mode;
    options.exact_cap = config.exact_cap;
    options.threads = config.threads;
    AttributionSet set = attribute_probe(model, ws.probe, config.method, options);
    quantize_to_float32(set);
    fs::create_directories(path.parent_path());
    save_attribution_set(set, path);
    report.passes += set.passes;
    report.sets.push_back(std::move(set));
  }
  return report;
}

AttributeReport cmd_attribute(const RunConfig& config) {
  const Workspace ws = open_workspace(config);
  AttributeReport report = attribute_models(ws);
  const std::string probe_checksum = ws.probe.checksum();
  json models = json::array();
  for (std::size_t i = 0; i < ws.models.size(); ++i) {
    models.push_back({{"id", ws.models[i].id},
                      {"cache", attribution_cache_path(config, ws.models[i], probe_checksum)
                                    .filename()
                                    .generic_string()},
                      {"maps", report.sets[i].size()}});
  }
  fs::create_directories(config.output_dir);
  write_json_file(config.output_dir / "attribute.json",
                  {{"metadata", output_metadata(config, probe_checksum)},
                   {"models", models},
                   {"passes", report.passes},
                   {"cache_hits", report.cache_hits}});
  return report;
}

AffinityReport cmd_affinity(const RunConfig& config) {
  const Workspace ws = open_workspace(config);
  AttributeReport attributions = attribute_models(ws);
  AffinityReport report;
  report.matrix = affinity_matrix(attributions.sets, config.threads);
  report.passes = attributions.passes;
  report.cache_hits = attributions.cache_hits;
  write_affinity_outputs(config, report.matrix, report);
  return report;
}

std::vector<RankedSource> cmd_rank(const RunConfig& config, const std::string& target) {
  std::vector<RankedSource> ranked;
  std::string probe_checksum;
  if (config.matrix) {
    const json j = read_json_file(*config.matrix);
    if (is_affinity_json(j)) {
      const AffinityMatrix m = affinity_from_json(j);
      ranked = rank_sources(m, target);
      probe_checksum = probe_checksum_of(m.similarity.metadata);
    } else {
      const LabeledMatrix m = matrix_from_json(j);
      ranked = rank_sources(m, target);
      probe_checksum = probe_checksum_of(m.metadata);
    }
  } else {
    const AffinityReport affinity = cmd_affinity(config);
    ranked = rank_sources(affinity.matrix, target);
    probe_checksum = probe_checksum_of(affinity.matrix.similarity.metadata);
  }
  std::string csv = "# " + output_comment(config, probe_checksum) + "\nrank,source,value\n";
  for (const auto& r : ranked) {
    csv += std::to_string(r.rank) + "," + r.id + "," + format_double(r.value) + "\n";
  }
  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir / ("rank_" + safe_name(target) + ".csv"), csv);
  return ranked;
}

InsertReport cmd_insert(const RunConfig& config, const fs::path& new_model) {
  const Workspace ws = open_workspace(config);
  const fs::path existing_path = config.output_dir / "affinity.json";
  if (!fs::exists(existing_path)) {
    fail(ErrorKind::IoError, existing_path.string() + " not found; run affinity first");
  }
  const json existing_json = read_json_file(existing_path);
  const AffinityMatrix existing = affinity_from_json(existing_json);
  const auto& meta = existing.similarity.metadata;
  if (!meta.contains("run") || meta["run"].value("config_hash", "") != config.hash()) {
    fail(ErrorKind::IdMismatch, existing_path.string() + " was produced by a different config");
  }
  std::vector<std::string> ids;
  for (const auto& m : ws.models) ids.push_back(m.id);
  if (ids != existing.ids()) {
    fail(ErrorKind::IdMismatch, existing_path.string() + " covers different models");
  }

  InsertReport report;
  report.updated_config = config;
  report.updated_config.models.push_back(new_model);

  Workspace added_ws = ws;
  added_ws.config = report.updated_config;
  added_ws.models = {load_model(new_model)};
  const AttributeReport old_sets = attribute_models(ws);
  const AttributeReport new_set = attribute_models(added_ws);
  report.passes = old_sets.passes + new_set.passes;

  InsertResult inserted = insert_model(existing, old_sets.sets, new_set.sets.front(), config.threads);
  report.new_distances = inserted.new_distances;
  inserted.matrix.similarity.metadata.erase("run");
  AffinityReport files;
  write_affinity_outputs(report.updated_config, inserted.matrix, files);
  report.matrix = std::move(inserted.matrix);
  return report;
}

json EvalReport::to_json() const {
  auto points = [](const CurvePoints& c) {
    json a = json::array();
    for (const auto& [x, y] : c.points) a.push_back({x, y});
    return a;
  };
  return json{{"k_rel", k_rel},
              {"clamped", clamped},
              {"random_baseline", random_baseline},
              {"pearson", pearson ? json(*pearson) : json(nullptr)},
              {"spearman", spearman ? json(*spearman) : json(nullptr)},
              {"precision", points(curves.precision)},
              {"recall", points(curves.recall)},
              {"per_target_precision", curves.per_target_precision},
              {"per_target_recall", curves.per_target_recall}};
}

EvalReport cmd_eval(const RunConfig& config) {
  if (!config.oracle) fail(ErrorKind::InvalidArgument, "eval needs --oracle");
  config.validate();

  // Estimate: an explicit matrix or the affinity matrix of the models.
  RankingTable estimate;
  LabeledMatrix estimate_matrix;
  std::string probe_checksum;
  if (config.matrix) {
    const json j = read_json_file(*config.matrix);
    if (is_affinity_json(j)) {
      const AffinityMatrix m = affinity_from_json(j);
      estimate = affinity_ranking(m);
      estimate_matrix = m.similarity;
    } else {
      estimate_matrix = matrix_from_json(j);
      estimate = ranking_table(estimate_matrix);
    }
    probe_checksum = probe_checksum_of(estimate_matrix.metadata);
  } else {
    const AffinityReport affinity = cmd_affinity(config);
    estimate = affinity_ranking(affinity.matrix);
    estimate_matrix = affinity.matrix.similarity;
    probe_checksum = probe_checksum_of(estimate_matrix.metadata);
  }

  EvalReport report;
  const json oracle_json = read_json_file(*config.oracle);
  OracleRelevance relevance;
  if (is_matrix_json(oracle_json)) {
    const LabeledMatrix oracle = matrix_from_json(oracle_json);
    relevance = build_relevance(oracle, config.k_rel);
    const LabeledMatrix aligned = reorder(oracle, estimate_matrix.ids);
    report.pearson = pearson(estimate_matrix, aligned);
    report.spearman = spearman(estimate_matrix, aligned);
  } else {
    relevance = build_relevance(load_ranking_file(*config.oracle), config.k_rel);
  }
  report.curves = retrieval_curves(estimate, relevance);
  report.k_rel = relevance.k_rel;
  report.clamped = relevance.clamped;
  const double sources = static_cast<double>(estimate.targets.size() - 1);
  report.random_baseline = std::min(static_cast<double>(config.k_rel), sources) / sources;

  const std::string comment = output_comment(config, probe_checksum);
  fs::create_directories(config.output_dir);
  write_curve_csv(report.curves.precision, config.output_dir / "precision.csv", comment);
  write_curve_csv(report.curves.recall, config.output_dir / "recall.csv", comment);
  json out = report.to_json();
  out["metadata"] = output_metadata(config, probe_checksum);
  write_json_file(config.output_dir / "eval.json", out);
  return report;
}

LabeledMatrix cmd_svcca(const RunConfig& config) {
  const Workspace ws = open_workspace(config);
  LabeledMatrix m = correlation_matrix(ws.models, ws.probe, config.variance_threshold,
                                       config.threads);
  const std::string probe_checksum = ws.probe.checksum();
  m.metadata["run"] = output_metadata(config, probe_checksum);
  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir / "svcca.csv",
                  matrix_to_csv(m, output_comment(config, probe_checksum)));
  write_json_file(config.output_dir / "svcca.json", matrix_to_json(m));
  return m;
}

Dendrogram cmd_tree(const RunConfig& config) {
  LabeledMatrix distances;
  std::string probe_checksum;
  if (config.matrix) {
    config.validate();
    const json j = read_json_file(*config.matrix);
    if (is_affinity_json(j)) {
      const AffinityMatrix m = affinity_from_json(j);
      distances = dissimilarity_matrix(m, config.dissimilarity);
      probe_checksum = probe_checksum_of(m.similarity.metadata);
    } else {
      const LabeledMatrix m = matrix_from_json(j);
      distances = to_dissimilarity(m, config.dissimilarity);
      probe_checksum = probe_checksum_of(m.metadata);
    }
  } else {
    const AffinityReport affinity = cmd_affinity(config);
    distances = dissimilarity_matrix(affinity.matrix, config.dissimilarity);
    probe_checksum = probe_checksum_of(affinity.matrix.similarity.metadata);
  }
  Dendrogram tree = agglomerate(distances, config.linkage);
  const std::string comment = output_comment(config, probe_checksum);
  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir / "tree.nwk", "[" + comment + "]\n" + to_newick(tree) + "\n");
  write_text_file(config.output_dir / "tree.txt", "# " + comment + "\n" + render_text(tree));
  return tree;
}

CurvePoints cmd_cpc(const RunConfig& config) {
  if (!config.oracle) fail(ErrorKind::InvalidArgument, "cpc needs --oracle");
  LabeledMatrix correlations;
  if (config.matrix) {
    config.validate();
    correlations = matrix_from_json(read_json_file(*config.matrix));
  } else {
    correlations = cmd_svcca(config);
  }
  const json oracle_json = read_json_file(*config.oracle);
  const RankingTable oracle = is_matrix_json(oracle_json)
                                  ? ranking_table(matrix_from_json(oracle_json))
                                  : load_ranking_file(*config.oracle);
  CurvePoints curve = cpc(correlations, oracle, config.cpc_normalization);
  const std::string probe_checksum = probe_checksum_of(correlations.metadata);
  fs::create_directories(config.output_dir);
  write_curve_csv(curve, config.output_dir / "cpc.csv", output_comment(config, probe_checksum));
  return curve;
}

GradCheckReport gradient_check(const ModelSpec& model, const ProbeSet& probe,
                               std::size_t images, std::size_t coordinates,
                               std::uint64_t seed) {
  constexpr double h = 1e-5;
  GradCheckReport report;
  const std::size_t count = std::min(images, probe.size());
  const std::size_t dim = model.graph.representation_dim();
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor x = preprocess(model.preproc, probe.images[i]);
    Rng rng(seed + i);
    Tensor weights({dim});
    for (auto& v : weights.data()) v = rng.normal();
    const ForwardResult fwd = forward(model.graph, x);
    const Tensor g = backward(model.graph, fwd.tape, weights);

    std::vector<std::size_t> coords;
    if (coordinates == 0 || coordinates >= x.size()) {
      coords.resize(x.size());
      for (std::size_t k = 0; k < x.size(); ++k) coords[k] = k;
    } else {
      coords = sample_indices(x.size(), coordinates, seed ^ (0x5eedULL + i));
    }
    auto objective = [&](const Tensor& input) {
      const Tensor r = forward(model.graph, input).representation;
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += weights[k] * r[k];
      return s;
    };
    double diff = 0.0, norm_g = 0.0, norm_fd = 0.0;
    for (const std::size_t k : coords) {
      Tensor plus = x, minus = x;
      plus[k] += h;
      minus[k] -= h;
      const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
      diff += (g[k] - fd) * (g[k] - fd);
      norm_g += g[k] * g[k];
      norm_fd += fd * fd;
    }
    const double scale = std::sqrt(std::max(norm_g, norm_fd));
    const double rel = scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
    report.entries.push_back({model.id, i, rel, coords.size()});
    report.max_relative_error = std::max(report.max_relative_error, rel);
  }
  return report;
}

GradCheckReport cmd_gradcheck(const RunConfig& config, std::size_t images,
                              std::size_t coordinates) {
  const Workspace ws = open_workspace(config);
  GradCheckReport report;
  for (const auto& model : ws.models) {
    const GradCheckReport r = gradient_check(model, ws.probe, images, coordinates, config.seed);
    report.entries.insert(report.entries.end(), r.entries.begin(), r.entries.end());
    report.max_relative_error = std::max(report.max_relative_error, r.max_relative_error);
  }
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"model", e.model_id},
                       {"image", e.image_index},
                       {"relative_error", e.relative_error},
                       {"coordinates", e.coordinates}});
  }
  fs::create_directories(config.output_dir);
  write_json_file(config.output_dir / "gradcheck.json",
                  {{"metadata", output_metadata(config, ws.probe.checksum())},
                   {"step", 1e-5},
                   {"tolerance", report.tolerance},
                   {"max_relative_error", report.max_relative_error},
                   {"passed", report.passed()},
                   {"entries", entries}});
  return report;
}

}  // namespace modelspace
