// modelspace: command-line front end.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "modelspace/error.hpp"
#include "modelspace/pipeline.hpp"
#include "modelspace/synthetic.hpp"

namespace fs = std::filesystem;
using namespace modelspace;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raw flag values; converted to a RunConfig after parsing so that enum
// spellings are checked in one place.
struct Flags {
  std::string probe;
  std::vector<std::string> models;
  std::string method = "elrp";
  double epsilon = kDefaultEpsilon;
  std::string mode = "single_pass";
  std::size_t probe_size = 0;
  std::uint64_t seed = 0;
  std::string oracle;
  std::string out = "out";
  std::size_t threads = 1;
  std::string linkage = "average";
  std::string dissimilarity = "inverse";
  double variance_threshold = kDefaultVarianceThreshold;
  std::size_t k_rel = 5;
  std::size_t exact_cap = 512;
  std::string cpc_norm = "model-count";
  std::string matrix;
};

void add_run_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--probe", f.probe, "Probe manifest (probe.json)")->required();
  cmd->add_option("--model,-m", f.models, "Model bundle directory (repeatable)")->required();
  cmd->add_option("--method", f.method, "saliency | gradxinput | elrp")->capture_default_str();
  cmd->add_option("--epsilon", f.epsilon, "epsilon-LRP stabilizer")->capture_default_str();
  cmd->add_option("--mode", f.mode, "single_pass | exact")->capture_default_str();
  cmd->add_option("--probe-size", f.probe_size, "Sample this many probe images (0 = all)");
  cmd->add_option("--seed", f.seed, "Probe sampling seed")->capture_default_str();
  cmd->add_option("--oracle", f.oracle, "Oracle ranking file or matrix JSON");
  cmd->add_option("--out,-o", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--threads,-j", f.threads, "Worker threads")->capture_default_str();
  cmd->add_option("--linkage", f.linkage, "average | single | complete")->capture_default_str();
  cmd->add_option("--dissimilarity", f.dissimilarity, "inverse | one-minus")
      ->capture_default_str();
  cmd->add_option("--variance-threshold", f.variance_threshold, "SVCCA kept variance")
      ->capture_default_str();
  cmd->add_option("--k-rel", f.k_rel, "Relevant sources per target")->capture_default_str();
  cmd->add_option("--exact-cap", f.exact_cap, "Largest D allowed in exact mode")
      ->capture_default_str();
  cmd->add_option("--cpc-norm", f.cpc_norm, "model-count | bucket-count")->capture_default_str();
  cmd->add_option("--matrix", f.matrix, "Use a precomputed matrix JSON");
}

RunConfig to_config(const Flags& f) {
  try {
    RunConfig c;
    c.probe = f.probe;
    for (const auto& m : f.models) c.models.emplace_back(m);
    c.method.kind = method_from_string(f.method);
    c.method.epsilon = f.epsilon;
    c.mode = mode_from_string(f.mode);
    c.probe_size = f.probe_size;
    c.seed = f.seed;
    if (!f.oracle.empty()) c.oracle = f.oracle;
    c.output_dir = f.out;
    c.threads = f.threads;
    c.linkage = linkage_from_string(f.linkage);
    c.dissimilarity = dissimilarity_from_string(f.dissimilarity);
    c.variance_threshold = f.variance_threshold;
    c.k_rel = f.k_rel;
    c.exact_cap = f.exact_cap;
    if (f.cpc_norm == "model-count") {
      c.cpc_normalization = CpcNormalization::ModelCount;
    } else if (f.cpc_norm == "bucket-count") {
      c.cpc_normalization = CpcNormalization::BucketCount;
    } else {
      throw UsageError("unknown --cpc-norm '" + f.cpc_norm + "'");
    }
    if (!f.matrix.empty()) c.matrix = f.matrix;
    c.validate();
    return c;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void report_passes(std::uint64_t passes, std::size_t hits) {
  std::cout << "passes: " << passes << " (cache hits: " << hits << ")\n";
}

void print_curve(const CurvePoints& c) {
  std::cout << c.x_label << ',' << c.y_label << '\n';
  for (const auto& [x, y] : c.points) std::cout << format_double(x) << ',' << format_double(y) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transferability estimation from attribution maps"};
  app.require_subcommand(1);
  Flags f;

  auto* attribute = app.add_subcommand("attribute", "Compute and cache attribution sets");
  auto* affinity = app.add_subcommand("affinity", "Pairwise model affinity matrix");
  auto* rank = app.add_subcommand("rank", "Rank source models for a target");
  auto* insert = app.add_subcommand("insert", "Add one model to an existing affinity matrix");
  auto* eval = app.add_subcommand("eval", "P@K / R@K against an oracle");
  auto* svcca_cmd = app.add_subcommand("svcca", "SVCCA representation correlation matrix");
  auto* tree = app.add_subcommand("tree", "Agglomerative task tree (Newick)");
  auto* cpc_cmd = app.add_subcommand("cpc", "Correlation-priority curve");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  for (auto* cmd : {attribute, affinity, rank, insert, eval, svcca_cmd, tree, cpc_cmd, gradcheck}) {
    add_run_flags(cmd, f);
  }
  std::string target;
  rank->add_option("--target,-t", target, "Target model id")->required();
  std::string new_model;
  insert->add_option("--new-model", new_model, "Bundle to insert")->required();
  std::size_t gc_images = 2, gc_coords = 64;
  gradcheck->add_option("--images", gc_images, "Probe images to check")->capture_default_str();
  gradcheck->add_option("--coords", gc_coords, "Input coordinates per image (0 = all)")
      ->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Write a synthetic model family, probe and oracle");
  FamilySpec family;
  std::string synth_out = "synthetic";
  std::string arch = "small_conv";
  std::size_t probe_count = 200;
  synth->add_option("--out,-o", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--groups", family.groups, "Number of groups")->capture_default_str();
  synth->add_option("--per-group", family.models_per_group, "Models per group")
      ->capture_default_str();
  synth->add_option("--shared-depth", family.shared_depth, "Shared leading parametric layers")
      ->capture_default_str();
  synth->add_option("--sigma", family.sigma, "Relative perturbation of later layers")
      ->capture_default_str();
  synth->add_option("--arch", arch, "small_conv | mlp")->capture_default_str();
  synth->add_option("--input-size", family.input_size, "Model input width/height")
      ->capture_default_str();
  synth->add_option("--channels", family.input_channels, "Model input channels (1 or 3)")
      ->capture_default_str();
  synth->add_flag("--vary-input-size", family.vary_input_size, "Odd groups use 3/4-size inputs");
  synth->add_option("--probe-count", probe_count, "Synthetic probe images")->capture_default_str();
  synth->add_option("--seed", family.seed, "Generator seed")->capture_default_str();

  auto* heat = app.add_subcommand("heatmap", "Export one cached attribution map as PGM");
  std::string cache_file, heat_out;
  std::size_t heat_index = 0;
  heat->add_option("--cache", cache_file, "Attribution cache file")->required();
  heat->add_option("--index", heat_index, "Probe image index")->capture_default_str();
  heat->add_option("--out,-o", heat_out, "Output .pgm")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      family.architecture = architecture_from_string(arch);
      const fs::path root = synth_out;
      const auto paths = write_family(family, root / "models");
      Shape shape{family.input_size, family.input_size, family.input_channels};
      save_probe(synthetic_probe(probe_count, shape, family.seed), root / "probe");
      std::vector<std::string> ids;
      for (const auto& p : paths) ids.push_back(p.filename().string());
      save_ranking_file(synthetic_oracle(ids), root / "oracle.json");
      std::cout << "wrote " << paths.size() << " models, " << probe_count << " probe images to "
                << root.string() << '\n';
      return 0;
    }
    if (heat->parsed()) {
      const AttributionSet set = load_attribution_set(cache_file);
      if (heat_index >= set.size()) {
        fail(ErrorKind::InvalidArgument, "index " + std::to_string(heat_index) + " out of range");
      }
      write_heatmap_pgm(set.maps[heat_index], heat_out);
      return 0;
    }

    RunConfig config;
    try {
      config = to_config(f);
    } catch (const UsageError& e) {
      std::cerr << "usage error: " << e.what() << '\n';
      return 2;
    }

    if (attribute->parsed()) {
      const auto r = cmd_attribute(config);
      report_passes(r.passes, r.cache_hits);
    } else if (affinity->parsed()) {
      const auto r = cmd_affinity(config);
      report_passes(r.passes, r.cache_hits);
      std::cout << "wrote " << r.csv.string() << ", " << r.json.string() << '\n';
    } else if (rank->parsed()) {
      for (const auto& s : cmd_rank(config, target)) {
        std::cout << s.rank << ' ' << s.id << ' ' << format_double(s.value) << '\n';
      }
    } else if (insert->parsed()) {
      const auto r = cmd_insert(config, new_model);
      std::cout << "new distances: " << r.new_distances << '\n';
      report_passes(r.passes, 0);
    } else if (eval->parsed()) {
      const auto r = cmd_eval(config);
      print_curve(r.curves.precision);
      print_curve(r.curves.recall);
      std::cout << "random baseline P@K: " << format_double(r.random_baseline) << '\n';
      if (r.pearson) std::cout << "pearson: " << format_double(*r.pearson) << '\n';
      if (r.spearman) std::cout << "spearman: " << format_double(*r.spearman) << '\n';
    } else if (svcca_cmd->parsed()) {
      std::cout << matrix_to_csv(cmd_svcca(config));
    } else if (tree->parsed()) {
      const auto t = cmd_tree(config);
      std::cout << to_newick(t) << '\n' << render_text(t);
    } else if (cpc_cmd->parsed()) {
      print_curve(cmd_cpc(config));
    } else if (gradcheck->parsed()) {
      const auto r = cmd_gradcheck(config, gc_images, gc_coords);
      std::cout << "max relative error: " << format_double(r.max_relative_error) << '\n';
      if (!r.passed()) {
        std::cerr << "gradient check failed (tolerance " << r.tolerance << ")\n";
        return 1;
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}
                     .dump()
              << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
}
