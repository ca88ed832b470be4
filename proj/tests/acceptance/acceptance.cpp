// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
// Usage: acceptance_tests <work dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "modelspace/attribution.hpp"
#include "modelspace/clustering.hpp"
#include "modelspace/evaluation.hpp"
#include "modelspace/model_space.hpp"
#include "modelspace/pipeline.hpp"
#include "modelspace/svcca.hpp"
#include "modelspace/synthetic.hpp"
#include "test_support.hpp"

using namespace modelspace;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  std::set<LayerKind> seen;
  double worst = 0.0;
  const int graphs = 60;
  for (int trial = 0; trial < graphs; ++trial) {
    const Graph g = testing::random_graph(rng, trial);
    for (const auto& l : g.layers()) seen.insert(l.kind);
    const Tensor x = testing::random_tensor(g.input_shape(), rng);
    const auto fwd = forward(g, x);
    const std::size_t d = g.representation_dim();
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> seed(d, 0.0);
      seed[k] = 1.0;
      const Tensor fd = testing::finite_difference(g, x, seed, 1e-5);
      worst = std::max(worst, testing::rel_l2(backward(g, fwd.tape, Tensor({d}, seed)), fd));
    }
  }
  const double secs = seconds_since(t0);
  const bool all_kinds = seen.size() == 8;
  return {worst <= 1e-4 && all_kinds && secs < 60.0,
          std::to_string(graphs) + " graphs, " + std::to_string(seen.size()) +
              "/8 layer kinds, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// ---- 2 -------------------------------------------------------------------

Outcome single_pass_exactness() {
  Rng rng(2);
  double worst = 0.0, worst_sal = -1e300;
  int graphs = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t channels = trial % 2 == 0 ? 1 : 3;
    const Graph g = testing::random_graph(rng, trial, {.bias = true, .max_parameters = 200, .channels = channels});
    if (g.representation_dim() > 64) continue;
    ++graphs;
    const ModelSpec m = testing::wrap_model("m", g);
    const Tensor x = testing::random_tensor(g.input_shape(), rng, 0, 1);
    const std::size_t d = g.representation_dim();
    for (const Method method : {Method::GradientTimesInput, Method::EpsilonLrp, Method::Saliency}) {
      const AttributionMethod am{method, kDefaultEpsilon};
      // per-unit mean oracle
      Tensor mean(g.input_shape());
      for (std::size_t k = 0; k < d; ++k) {
        const Tensor a = attribute_per_unit(m, x, am, k);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += a[i];
      }
      for (auto& v : mean.data()) v /= double(d);
      const Tensor single = attribute_single_pass(m, x, am).map;
      if (method == Method::Saliency) {
        for (std::size_t i = 0; i < single.size(); ++i) worst_sal = std::max(worst_sal, single[i] - mean[i]);
      } else {
        worst = std::max(worst, testing::rel_max(single, mean));
      }
    }
  }
  return {graphs >= 30 && worst <= 1e-10 && worst_sal <= 1e-12,
          std::to_string(graphs) + " graphs, worst rel err " + fmt(worst) +
              ", max saliency excess " + fmt(worst_sal)};
}

// ---- 3 -------------------------------------------------------------------

AttributionSet as_set(const std::string& id, std::vector<Tensor> maps) {
  AttributionSet s;
  s.model_id = id;
  s.probe_checksum = "acceptance";
  s.probe_shape = maps.front().shape();
  s.maps = std::move(maps);
  s.passes = s.maps.size();
  return s;
}

Outcome distance_contract() {
  Rng rng(3);
  bool ok = true;
  std::string detail;
  // d = 4/3 for cosines {1, 0.5}; maps built directly in the plane
  {
    const Tensor e1({2, 1, 1}, {1, 0}), e2({2, 1, 1}, {0.5, std::sqrt(0.75)});
    const double d = distance(as_set("a", {e1, e1}), as_set("b", {e1, e2})).distance;
    ok &= std::abs(d - 4.0 / 3.0) <= 1e-12;
    detail += "d(1,0.5)=" + fmt(d);
  }
  double worst_inv = 0.0, worst_self = 0.0;
  bool symmetric = true, ranks_same = true;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t models = 5, n = 8;
    std::vector<std::vector<Tensor>> maps(models);
    const auto base = [&] {
      std::vector<Tensor> b;
      for (std::size_t i = 0; i < n; ++i) b.push_back(testing::normal_tensor({4, 4, 2}, rng));
      return b;
    }();
    for (std::size_t m = 0; m < models; ++m)
      for (std::size_t i = 0; i < n; ++i) {
        Tensor t = testing::normal_tensor({4, 4, 2}, rng, 0.5 + 0.3 * double(m));
        for (std::size_t j = 0; j < t.size(); ++j) t[j] += base[i][j];
        maps[m].push_back(t);
      }
    std::vector<AttributionSet> sets, transformed;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[1], perm[5]);
    for (std::size_t m = 0; m < models; ++m) {
      sets.push_back(as_set("m" + std::to_string(m), maps[m]));
      std::vector<Tensor> t;
      const double scale = rng.uniform(0.05, 20.0);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor x = maps[m][perm[i]];
        for (auto& v : x.data()) v *= scale;
        t.push_back(x);
      }
      transformed.push_back(as_set("m" + std::to_string(m), t));
    }
    for (std::size_t a = 0; a < models; ++a) {
      worst_self = std::max(worst_self, std::abs(distance(sets[a], sets[a]).distance - 1.0));
      for (std::size_t b = 0; b < models; ++b) {
        const double d = distance(sets[a], sets[b]).distance;
        symmetric &= d == distance(sets[b], sets[a]).distance;
        worst_inv = std::max(worst_inv, std::abs(distance(transformed[a], transformed[b]).distance - d));
      }
    }
    const auto m1 = affinity_matrix(sets), m2 = affinity_matrix(transformed);
    for (const auto& id : m1.ids()) {
      std::vector<std::string> r1, r2;
      for (const auto& r : rank_sources(m1, id)) r1.push_back(r.id);
      for (const auto& r : rank_sources(m2, id)) r2.push_back(r.id);
      ranks_same &= r1 == r2;
    }
  }
  ok &= worst_self <= 1e-9 && symmetric && worst_inv <= 1e-12 && ranks_same;
  detail += ", self err " + fmt(worst_self) + ", symmetric " + (symmetric ? "yes" : "no") +
            ", invariance err " + fmt(worst_inv) + ", rankings " + (ranks_same ? "equal" : "differ");
  return {ok, detail};
}

// ---- 4 -------------------------------------------------------------------

Outcome lrp_degeneracy_and_conservation() {
  Rng rng(4);
  bool exact = true;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = rng.below(2) == 0 ? 1 : 3;
    const Graph g({6, 6, c},
                  {LayerSpec::conv2d(testing::normal_tensor({2, 3, 3, c}, rng), testing::random_tensor({2}, rng)),
                   LayerSpec::avgpool(2, 2), LayerSpec::maxpool(2, 1), LayerSpec::flatten(),
                   LayerSpec::dense(testing::normal_tensor({3, 2}, rng), testing::random_tensor({3}, rng))});
    const ModelSpec m = testing::wrap_model("lin", g);
    const Tensor x = testing::random_tensor(g.input_shape(), rng, 0, 1);
    exact &= attribute_single_pass(m, x, {Method::EpsilonLrp, 1e-2}).map ==
             attribute_single_pass(m, x, {Method::GradientTimesInput, 1e-2}).map;
  }
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const Graph g = testing::random_graph(rng, trial, {.bias = false, .max_parameters = 200, .channels = 1});
    const ModelSpec m = testing::wrap_model("nb", g);
    const Tensor x = testing::random_tensor(g.input_shape(), rng, 0, 1);
    const Tensor r = forward(g, x).representation;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (std::abs(r[k]) < 1e-6) continue;
      const Tensor a = attribute_per_unit(m, x, {Method::EpsilonLrp, 1e-9}, k);
      const double sum = std::accumulate(a.data().begin(), a.data().end(), 0.0);
      worst = std::max(worst, std::abs(sum - r[k]) / std::abs(r[k]));
    }
  }
  return {exact && worst <= 1e-4, std::string("degeneracy ") + (exact ? "exact" : "differs") +
                                      ", worst conservation err " + fmt(worst)};
}

// ---- 5 -------------------------------------------------------------------

ActivationMatrix gaussian_activations(Rng& rng, std::size_t d, std::size_t n) {
  ActivationMatrix a;
  a.rows = d;
  a.cols = n;
  a.values.resize(d * n);
  for (auto& v : a.values) v = rng.normal();
  return a;
}

Outcome svcca_sanity() {
  Rng rng(5);
  double worst_one = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const ActivationMatrix a = gaussian_activations(rng, 10, 500);
    worst_one = std::max(worst_one, std::abs(svcca_correlation(a, a) - 1.0));
    // orthogonal Q from Gram-Schmidt
    const std::size_t d = 10;
    std::vector<double> q(d * d);
    for (auto& v : q) v = rng.normal();
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += q[r * d + c] * q[r * d + p];
        for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
      }
      double nrm = 0.0;
      for (std::size_t r = 0; r < d; ++r) nrm += q[r * d + c] * q[r * d + c];
      for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= std::sqrt(nrm);
    }
    ActivationMatrix b = a;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += q[i * d + k] * a.at(k, j);
        b.at(i, j) = s;
      }
    worst_one = std::max(worst_one, std::abs(svcca_correlation(a, b) - 1.0));
  }
  // Bound from a 2000-pair calibration: mean 0.119, sd 0.0089, max 0.155.
  const double per_trial_bound = 0.17, mean_bound = 0.13;
  double sum = 0.0, largest = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double c = svcca_correlation(gaussian_activations(rng, 10, 500), gaussian_activations(rng, 10, 500));
    sum += c;
    largest = std::max(largest, c);
  }
  const double mean = sum / 20.0;
  return {worst_one <= 1e-6 && largest < per_trial_bound && mean < mean_bound,
          "self/rotation err " + fmt(worst_one) + ", random mean " + fmt(mean) + " (bound " +
              fmt(mean_bound) + "), random max " + fmt(largest) + " (bound " + fmt(per_trial_bound) + ")"};
}

// ---- shared synthetic family for 6, 7, 8, 10 ------------------------------

struct Family {
  fs::path root;
  std::vector<fs::path> bundles;
  std::vector<std::string> ids;
  fs::path probe;
  double setup_seconds = 0.0;
};

Family make_family(const fs::path& work) {
  const auto t0 = Clock::now();
  Family f;
  f.root = work / "family";
  fs::remove_all(f.root);
  FamilySpec spec;  // 4 groups x 3 models
  spec.groups = 4;
  spec.models_per_group = 3;
  f.bundles = write_family(spec, f.root / "models");
  for (const auto& m : generate_family(spec)) f.ids.push_back(m.id);
  save_probe(synthetic_probe(200, {spec.input_size, spec.input_size, 3}, 11), f.root / "probe");
  f.probe = f.root / "probe" / "probe.json";
  f.setup_seconds = seconds_since(t0);
  return f;
}

RunConfig family_config(const Family& f, const std::string& out, Method method) {
  RunConfig c;
  c.probe = f.probe;
  c.models = f.bundles;
  c.method.kind = method;
  c.output_dir = f.root / out;
  fs::remove_all(c.output_dir);
  return c;
}

Outcome cost_accounting(const Family& f) {
  const RunConfig c = family_config(f, "cost", Method::EpsilonLrp);
  const auto r = cmd_affinity(c);
  const std::uint64_t expected = f.bundles.size() * 200;
  return {r.passes == expected && r.cache_hits == 0,
          "passes " + std::to_string(r.passes) + ", T*M = " + std::to_string(expected)};
}

Outcome synthetic_end_to_end(const Family& f) {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  // relevance = the two other members of the same group
  OracleRelevance rel;
  for (const auto& target : f.ids) {
    for (const auto& s : f.ids)
      if (s != target && group_of(s) == group_of(target)) rel.relevant[target].insert(s);
  }
  for (const auto& [method, name] :
       std::vector<std::pair<Method, std::string>>{{Method::EpsilonLrp, "elrp"},
                                                   {Method::GradientTimesInput, "gradxinput"}}) {
    const RunConfig c = family_config(f, "e2e_" + name, method);
    const AffinityMatrix m = cmd_affinity(c).matrix;
    double p2 = 0.0;
    for (const auto& target : f.ids) {
      std::vector<std::string> ranking;
      for (const auto& r : rank_sources(m, target)) ranking.push_back(r.id);
      p2 += precision_at_k(ranking, rel.relevant.at(target), 2);
    }
    p2 /= double(f.ids.size());
    ok &= p2 >= 0.9;
    detail += name + " P@2 " + fmt(p2) + ", ";

    const Dendrogram tree = cmd_tree(c);
    bool groups_ok = true;
    const auto groups = cut_tree(tree, 4);
    groups_ok &= groups.size() == 4;
    for (const auto& g : groups) {
      groups_ok &= g.size() == 3;
      for (const auto& id : g) groups_ok &= group_of(id) == group_of(g.front());
    }
    ok &= groups_ok;
    detail += std::string("tree cut ") + (groups_ok ? "recovers groups" : "mixes groups") + "; ";
  }
  const double secs = seconds_since(t0) + f.setup_seconds;
  ok &= secs < 300.0;
  return {ok, detail + fmt(secs) + " s"};
}

Outcome method_agreement(const Family& f) {
  const RunConfig c = family_config(f, "agreement", Method::EpsilonLrp);
  const AffinityMatrix m = cmd_affinity(c).matrix;
  const LabeledMatrix s = cmd_svcca(c);
  // independent Pearson over the (i < j) entries
  std::vector<double> x, y;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      x.push_back(m.similarity.at(i, j));
      y.push_back(s.at(s.index_of(m.ids()[i]), s.index_of(m.ids()[j])));
    }
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double r = sxy / std::sqrt(sxx * syy);
  const double lib = pearson(m.similarity, s);
  return {r >= 0.8 && std::abs(r - lib) <= 1e-12,
          "pearson(elrp similarity, svcca) " + fmt(r) + " (library " + fmt(lib) + ")"};
}

// ---- 9 -------------------------------------------------------------------

Outcome evaluation_metrics() {
  const std::set<std::string> rel = {"A", "B", "C", "D", "E"};
  const std::vector<std::string> ranking = {"A", "B", "X", "C", "Y", "D", "Z", "E"};
  const bool hand = precision_at_k(ranking, rel, 3) == 2.0 / 3.0 && recall_at_k(ranking, rel, 3) == 2.0 / 5.0;

  // random rankings over N-1 = 19 sources with K_rel = 5 relevant
  Rng rng(9);
  std::vector<std::string> cand;
  for (int i = 0; i < 19; ++i) cand.push_back("s" + std::to_string(i));
  const std::set<std::string> relevant(cand.begin(), cand.begin() + 5);
  const double expected = 5.0 / 19.0;
  bool mc_ok = true;
  std::string mc_detail;
  for (std::size_t k : {1, 5, 10}) {
    double sum = 0.0, sum_sq = 0.0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
      auto r = cand;
      for (std::size_t i = r.size(); i > 1; --i) std::swap(r[i - 1], r[rng.below(i)]);
      const double p = precision_at_k(r, relevant, k);
      sum += p;
      sum_sq += p * p;
    }
    const double mean = sum / trials;
    const double sigma = std::sqrt((sum_sq / trials - mean * mean) / trials);
    mc_ok &= std::abs(mean - expected) <= 3.0 * sigma;
    mc_detail += " P@" + std::to_string(k) + "=" + fmt(mean);
  }
  const double sp = spearman({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1});
  return {hand && mc_ok && sp == -1.0,
          std::string("hand cases ") + (hand ? "exact" : "wrong") + ", MC (expect " + fmt(expected) +
              "):" + mc_detail + ", reversed spearman " + fmt(sp)};
}

// ---- 10 ------------------------------------------------------------------

Outcome determinism(const Family& f) {
  RunConfig a = family_config(f, "det_a", Method::EpsilonLrp);
  RunConfig b = family_config(f, "det_b", Method::EpsilonLrp);
  RunConfig c = family_config(f, "det_c", Method::EpsilonLrp);
  c.threads = 8;
  const std::string ca = slurp(cmd_affinity(a).csv);
  const std::string cb = slurp(cmd_affinity(b).csv);
  const std::string cc = slurp(cmd_affinity(c).csv);
  const bool repeat = ca == cb, threaded = ca == cc;

  RunConfig partial = family_config(f, "det_insert", Method::EpsilonLrp);
  partial.models.pop_back();
  cmd_affinity(partial);
  const auto ins = cmd_insert(partial, f.bundles.back());
  const std::string ci = slurp(partial.output_dir / "affinity.csv");
  const bool insert_ok = ci == ca && ins.new_distances == f.bundles.size() - 1;
  return {repeat && threaded && insert_ok,
          std::string("repeat ") + (repeat ? "identical" : "differs") + ", 1 vs 8 threads " +
              (threaded ? "identical" : "differs") + ", insert vs batch " +
              (insert_ok ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "modelspace_acceptance";
  fs::create_directories(work);

  Family family;
  bool family_ready = false;
  auto need_family = [&]() -> const Family& {
    if (!family_ready) {
      family = make_family(work);
      family_ready = true;
    }
    return family;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"single-pass exactness", single_pass_exactness},
      {"distance contract", distance_contract},
      {"epsilon-LRP degeneracy and conservation", lrp_degeneracy_and_conservation},
      {"SVCCA sanity", svcca_sanity},
      {"cost accounting", [&] { return cost_accounting(need_family()); }},
      {"synthetic end-to-end", [&] { return synthetic_end_to_end(need_family()); }},
      {"method agreement", [&] { return method_agreement(need_family()); }},
      {"evaluation metrics", evaluation_metrics},
      {"determinism", [&] { return determinism(need_family()); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - std::size_t(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
