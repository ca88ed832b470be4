// Python bindings for the core library. Tensors cross the boundary as
// float64 numpy arrays in [W, H, C] layout.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "modelspace/attribution.hpp"
#include "modelspace/clustering.hpp"
#include "modelspace/error.hpp"
#include "modelspace/evaluation.hpp"
#include "modelspace/model_io.hpp"
#include "modelspace/model_space.hpp"
#include "modelspace/pipeline.hpp"
#include "modelspace/probe.hpp"
#include "modelspace/svcca.hpp"
#include "modelspace/synthetic.hpp"

namespace py = pybind11;
using namespace modelspace;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array matrix_values(const LabeledMatrix& m) {
  Array out({py::ssize_t(m.size()), py::ssize_t(m.size())});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

LabeledMatrix make_matrix(const std::vector<std::string>& ids, const Array& values,
                          const std::string& kind) {
  if (values.ndim() != 2 || values.shape(0) != py::ssize_t(ids.size()) ||
      values.shape(1) != py::ssize_t(ids.size())) {
    fail(ErrorKind::ShapeMismatch, "matrix must be N x N for N ids");
  }
  LabeledMatrix m;
  m.ids = ids;
  m.values.assign(values.data(), values.data() + values.size());
  m.kind = kind == "distance" ? MatrixKind::Distance
           : kind == "svcca"  ? MatrixKind::Svcca
                              : MatrixKind::Similarity;
  m.validate();
  return m;
}

AttributionMethod method_of(const std::string& name, double epsilon) {
  AttributionMethod m{method_from_string(name), epsilon};
  m.validate();
  return m;
}

py::list ranked_list(const std::vector<RankedSource>& ranked) {
  py::list out;
  for (const auto& r : ranked) out.append(py::make_tuple(r.id, r.value, r.rank));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Model-space transferability estimation from attribution maps";

  static py::exception<Error> error_type(m, "ModelspaceError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::handle(error_type.ptr())(e.what());
      err.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), err.ptr());
    }
  });

  py::class_<ModelSpec>(m, "Model")
      .def_readonly("id", &ModelSpec::id)
      .def_readonly("task", &ModelSpec::task)
      .def_readonly("weights_checksum", &ModelSpec::weights_checksum)
      .def_property_readonly("input_shape", [](const ModelSpec& s) { return s.graph.input_shape(); })
      .def_property_readonly("representation_dim",
                             [](const ModelSpec& s) { return s.graph.representation_dim(); })
      .def("represent",
           [](const ModelSpec& s, const Array& image) {
             return to_numpy(forward(s.graph, preprocess(s.preproc, from_numpy(image))).representation);
           },
           py::arg("image"), "Representation of one [W, H, C] image after preprocessing.")
      .def("save", [](const ModelSpec& s, const std::filesystem::path& dir) { save_model(s, dir); })
      .def("__repr__", [](const ModelSpec& s) { return "<Model " + s.id + ">"; });

  m.def("load_model", &load_model, py::arg("bundle_dir"));

  py::class_<ProbeSet>(m, "Probe")
      .def_readonly("name", &ProbeSet::name)
      .def_readonly("sources", &ProbeSet::sources)
      .def_property_readonly("shape", [](const ProbeSet& p) { return p.shape; })
      .def_property_readonly("checksum", &ProbeSet::checksum)
      .def_property_readonly("images",
                             [](const ProbeSet& p) {
                               py::list out;
                               for (const auto& img : p.images) out.append(to_numpy(img));
                               return out;
                             })
      .def("__len__", &ProbeSet::size)
      .def("sample", &sample_probe, py::arg("n"), py::arg("seed"))
      .def("save", [](const ProbeSet& p, const std::filesystem::path& dir) { save_probe(p, dir); });

  m.def("load_probe", py::overload_cast<const std::filesystem::path&>(&load_probe),
        py::arg("manifest"));
  m.def("synthetic_probe", &synthetic_probe, py::arg("count"), py::arg("shape"), py::arg("seed"));
  m.def(
      "probe_from_images",
      [](const std::vector<Array>& images, const std::string& name) {
        ProbeSet p;
        p.name = name;
        for (std::size_t i = 0; i < images.size(); ++i) {
          p.images.push_back(from_numpy(images[i]));
          p.sources.push_back(name + ":" + std::to_string(i));
        }
        if (!p.images.empty()) p.shape = p.images.front().shape();
        p.validate();
        return p;
      },
      py::arg("images"), py::arg("name") = "array");

  py::class_<AttributionSet>(m, "AttributionSet")
      .def_readonly("model_id", &AttributionSet::model_id)
      .def_readonly("probe_checksum", &AttributionSet::probe_checksum)
      .def_readonly("passes", &AttributionSet::passes)
      .def_property_readonly("method", [](const AttributionSet& s) { return std::string(to_string(s.method.kind)); })
      .def_property_readonly("maps",
                             [](const AttributionSet& s) {
                               py::list out;
                               for (const auto& t : s.maps) out.append(to_numpy(t));
                               return out;
                             })
      .def("__len__", [](const AttributionSet& s) { return s.maps.size(); });

  m.def(
      "attribute",
      [](const ModelSpec& model, const Array& image, const std::string& method, double epsilon,
         const std::string& mode) {
        const auto am = method_of(method, epsilon);
        const Tensor x = from_numpy(image);
        return to_numpy(mode_from_string(mode) == AttributionMode::Exact
                            ? attribute_exact(model, x, am).map
                            : attribute_single_pass(model, x, am).map);
      },
      py::arg("model"), py::arg("image"), py::arg("method") = "elrp",
      py::arg("epsilon") = kDefaultEpsilon, py::arg("mode") = "single_pass",
      "Attribution map of one image, at the image's resolution.");
  m.def(
      "attribute_probe",
      [](const ModelSpec& model, const ProbeSet& probe, const std::string& method, double epsilon,
         const std::string& mode, std::size_t threads) {
        AttributeOptions opt;
        opt.mode = mode_from_string(mode);
        opt.threads = threads;
        py::gil_scoped_release release;
        return attribute_probe(model, probe, method_of(method, epsilon), opt);
      },
      py::arg("model"), py::arg("probe"), py::arg("method") = "elrp",
      py::arg("epsilon") = kDefaultEpsilon, py::arg("mode") = "single_pass", py::arg("threads") = 1);

  m.def("distance", [](const AttributionSet& a, const AttributionSet& b) { return distance(a, b).distance; },
        py::arg("a"), py::arg("b"));

  py::class_<LabeledMatrix>(m, "Matrix")
      .def(py::init(&make_matrix), py::arg("ids"), py::arg("values"), py::arg("kind") = "similarity")
      .def_readonly("ids", &LabeledMatrix::ids)
      .def_property_readonly("values", &matrix_values)
      .def_property_readonly("kind", [](const LabeledMatrix& mat) { return std::string(to_string(mat.kind)); })
      .def("to_csv", [](const LabeledMatrix& mat) { return matrix_to_csv(mat); })
      .def("to_json", [](const LabeledMatrix& mat) { return matrix_to_json(mat).dump(); });

  py::class_<AffinityMatrix>(m, "AffinityMatrix")
      .def_property_readonly("ids", &AffinityMatrix::ids)
      .def_property_readonly("similarity", [](const AffinityMatrix& a) { return a.similarity; })
      .def_property_readonly("distance", &AffinityMatrix::distance_matrix)
      .def("to_json", [](const AffinityMatrix& a) { return affinity_to_json(a).dump(); });

  m.def(
      "affinity",
      [](const std::vector<AttributionSet>& sets, std::size_t threads) {
        py::gil_scoped_release release;
        return affinity_matrix(sets, threads);
      },
      py::arg("sets"), py::arg("threads") = 1);
  m.def(
      "insert",
      [](const AffinityMatrix& matrix, const std::vector<AttributionSet>& sets,
         const AttributionSet& added) { return insert_model(matrix, sets, added).matrix; },
      py::arg("matrix"), py::arg("sets"), py::arg("new_set"));
  m.def("rank",
        [](const AffinityMatrix& mat, const std::string& target) { return ranked_list(rank_sources(mat, target)); },
        py::arg("matrix"), py::arg("target"));
  m.def("rank",
        [](const LabeledMatrix& mat, const std::string& target) { return ranked_list(rank_sources(mat, target)); },
        py::arg("matrix"), py::arg("target"));

  m.def(
      "svcca",
      [](const ModelSpec& a, const ModelSpec& b, const ProbeSet& probe, double threshold) {
        return svcca_correlation(collect_activations(a, probe), collect_activations(b, probe), threshold);
      },
      py::arg("a"), py::arg("b"), py::arg("probe"), py::arg("variance_threshold") = kDefaultVarianceThreshold);
  m.def(
      "correlation_matrix",
      [](const std::vector<ModelSpec>& models, const ProbeSet& probe, double threshold,
         std::size_t threads) {
        py::gil_scoped_release release;
        return correlation_matrix(models, probe, threshold, threads);
      },
      py::arg("models"), py::arg("probe"), py::arg("variance_threshold") = kDefaultVarianceThreshold,
      py::arg("threads") = 1);

  m.def(
      "newick_tree",
      [](const LabeledMatrix& distances, const std::string& linkage) {
        return to_newick(agglomerate(distances, linkage_from_string(linkage)));
      },
      py::arg("distances"), py::arg("linkage") = "average");
  m.def(
      "cut_tree",
      [](const std::string& newick, std::size_t clusters) { return cut_tree(parse_newick(newick), clusters); },
      py::arg("newick"), py::arg("clusters"));

  m.def("precision_at_k", &precision_at_k, py::arg("ranking"), py::arg("relevant"), py::arg("k"));
  m.def("recall_at_k", &recall_at_k, py::arg("ranking"), py::arg("relevant"), py::arg("k"));
  m.def("pearson", py::overload_cast<const std::vector<double>&, const std::vector<double>&>(&pearson));
  m.def("spearman", py::overload_cast<const std::vector<double>&, const std::vector<double>&>(&spearman));
  m.def("pearson", py::overload_cast<const LabeledMatrix&, const LabeledMatrix&>(&pearson));
  m.def("spearman", py::overload_cast<const LabeledMatrix&, const LabeledMatrix&>(&spearman));

  m.def(
      "generate_family",
      [](std::size_t groups, std::size_t per_group, std::size_t shared_depth, double sigma,
         const std::string& architecture, std::uint64_t seed) {
        FamilySpec spec;
        spec.groups = groups;
        spec.models_per_group = per_group;
        spec.shared_depth = shared_depth;
        spec.sigma = sigma;
        spec.architecture = architecture_from_string(architecture);
        spec.seed = seed;
        spec.validate();
        return generate_family(spec);
      },
      py::arg("groups") = 4, py::arg("per_group") = 3, py::arg("shared_depth") = 1,
      py::arg("sigma") = 0.05, py::arg("architecture") = "small_conv", py::arg("seed") = 1);
  m.def("group_of", &group_of, py::arg("model_id"));

  m.def(
      "_run_affinity",
      [](const std::string& config_json) {
        const RunConfig config = RunConfig::from_json(nlohmann::json::parse(config_json));
        config.validate();
        AffinityReport r;
        {
          py::gil_scoped_release release;
          r = cmd_affinity(config);
        }
        py::dict out;
        out["matrix"] = r.matrix;
        out["passes"] = r.passes;
        out["cache_hits"] = r.cache_hits;
        out["csv"] = r.csv;
        out["config_hash"] = config.hash();
        return out;
      },
      py::arg("config_json"));
}
