#include "modelspace/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "modelspace/error.hpp"
#include "modelspace/graph.hpp"
#include "modelspace/parallel.hpp"

namespace modelspace {

namespace fs = std::filesystem;

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Saliency: return "saliency";
    case Method::GradientTimesInput: return "gradxinput";
    case Method::EpsilonLrp: return "elrp";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "saliency") return Method::Saliency;
  if (name == "gradxinput") return Method::GradientTimesInput;
  if (name == "elrp") return Method::EpsilonLrp;
  fail(ErrorKind::InvalidArgument, "unknown attribution method '" + std::string(name) + "'");
}

std::string_view to_string(AttributionMode mode) {
  return mode == AttributionMode::SinglePass ? "single_pass" : "exact";
}

AttributionMode mode_from_string(std::string_view name) {
  if (name == "single_pass") return AttributionMode::SinglePass;
  if (name == "exact") return AttributionMode::Exact;
  fail(ErrorKind::InvalidArgument, "unknown attribution mode '" + std::string(name) + "'");
}

void AttributionMethod::validate() const {
  if (kind == Method::EpsilonLrp && !(epsilon > 0.0 && std::isfinite(epsilon))) {
    fail(ErrorKind::InvalidArgument, "epsilon-LRP needs epsilon > 0");
  }
}

namespace {

Tensor input_gradient(const ModelSpec& model, const TapeState& tape, const Tensor& seed,
                      const AttributionMethod& method) {
  if (method.kind == Method::EpsilonLrp) {
    return backward_modified(model.graph, tape, seed, method.epsilon);
  }
  return backward(model.graph, tape, seed);
}

Tensor combine(const AttributionMethod& method, const Tensor& x, Tensor grad) {
  if (method.kind == Method::Saliency) {
    for (auto& g : grad.data()) g = std::abs(g);
  } else {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= x[k];
  }
  return grad;
}

AttributionMap finish(const ModelSpec& model, const Tensor& image, Tensor model_map,
                      const AttributionMethod& method, std::size_t image_index) {
  AttributionMap out;
  out.map = unpreprocess_attribution(model.preproc, model_map, image.shape());
  require_finite(out.map, "attribution map of " + model.id);
  out.model_id = model.id;
  out.image_index = image_index;
  out.method = method;
  return out;
}

}  // namespace

Tensor attribute_per_unit(const ModelSpec& model, const Tensor& image,
                          const AttributionMethod& method, std::size_t unit) {
  method.validate();
  const std::size_t dim = model.graph.representation_dim();
  if (unit >= dim) {
    fail(ErrorKind::UnitOutOfRange,
         "unit " + std::to_string(unit) + " not in [0, " + std::to_string(dim) + ")");
  }
  const Tensor x = preprocess(model.preproc, image);
  const auto fwd = forward(model.graph, x);
  Tensor seed({dim});
  seed[unit] = 1.0;
  return combine(method, x, input_gradient(model, fwd.tape, seed, method));
}

AttributionMap attribute_single_pass(const ModelSpec& model, const Tensor& image,
                                     const AttributionMethod& method,
                                     std::size_t image_index) {
  method.validate();
  const std::size_t dim = model.graph.representation_dim();
  const Tensor x = preprocess(model.preproc, image);
  const auto fwd = forward(model.graph, x);
  const Tensor seed({dim}, 1.0 / static_cast<double>(dim));
  Tensor map = combine(method, x, input_gradient(model, fwd.tape, seed, method));
  return finish(model, image, std::move(map), method, image_index);
}

AttributionMap attribute_exact(const ModelSpec& model, const Tensor& image,
                               const AttributionMethod& method, std::size_t image_index) {
  method.validate();
  const std::size_t dim = model.graph.representation_dim();
  const Tensor x = preprocess(model.preproc, image);
  const auto fwd = forward(model.graph, x);
  Tensor sum(x.shape());
  Tensor seed({dim});
  for (std::size_t k = 0; k < dim; ++k) {
    seed[k] = 1.0;
    const Tensor unit_map = combine(method, x, input_gradient(model, fwd.tape, seed, method));
    seed[k] = 0.0;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += unit_map[i];
  }
  for (auto& v : sum.data()) v /= static_cast<double>(dim);
  return finish(model, image, std::move(sum), method, image_index);
}

AttributionSet attribute_probe(const ModelSpec& model, const ProbeSet& probe,
                               const AttributionMethod& method,
                               const AttributeOptions& options) {
  method.validate();
  probe.validate();
  const std::size_t dim = model.graph.representation_dim();
  if (options.mode == AttributionMode::Exact && dim > options.exact_cap) {
    fail(ErrorKind::ExactModeTooLarge, "representation dim " + std::to_string(dim) +
                                           " exceeds exact-mode cap " +
                                           std::to_string(options.exact_cap));
  }
  AttributionSet set;
  set.model_id = model.id;
  set.method = method;
  set.mode = options.mode;
  set.probe_checksum = probe.checksum();
  set.probe_shape = probe.shape;
  set.maps.resize(probe.size());
  parallel_for(probe.size(), options.threads, [&](std::size_t j) {
    auto result = options.mode == AttributionMode::SinglePass
                      ? attribute_single_pass(model, probe.images[j], method, j)
                      : attribute_exact(model, probe.images[j], method, j);
    set.maps[j] = std::move(result.map);
  });
  const std::uint64_t per_image = options.mode == AttributionMode::SinglePass ? 1 : dim;
  set.passes = per_image * probe.size();
  return set;
}

void quantize_to_float32(AttributionSet& set) {
  for (auto& m : set.maps) {
    for (auto& v : m.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'A', 'T', 'T', 'R', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little,
                "cache I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) fail(ErrorKind::ParseError, path.string() + ": truncated attribution cache");
  return value;
}

}  // namespace

void save_attribution_set(const AttributionSet& set, const fs::path& path) {
  if (set.probe_shape.size() != 3 || set.probe_checksum.size() != 64) {
    fail(ErrorKind::InvalidArgument, "attribution set is missing probe metadata");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(set.model_id.size()));
  out.write(set.model_id.data(), static_cast<std::streamsize>(set.model_id.size()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(set.method.kind));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(set.mode));
  put<double>(out, set.method.epsilon);
  out.write(set.probe_checksum.data(), 64);
  put<std::uint64_t>(out, set.maps.size());
  for (auto e : set.probe_shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  put<std::uint64_t>(out, set.passes);
  for (const auto& m : set.maps) {
    if (m.shape() != set.probe_shape) {
      fail(ErrorKind::ShapeMismatch, "map shape " + shape_str(m.shape()) +
                                         " differs from probe shape");
    }
    for (double v : m.data()) put<float>(out, static_cast<float>(v));
  }
  if (!out) fail(ErrorKind::IoError, "failed writing " + path.string());
}

AttributionSet load_attribution_set(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    fail(ErrorKind::ParseError, path.string() + ": not an attribution cache");
  }
  AttributionSet set;
  const auto id_len = get<std::uint32_t>(in, path);
  set.model_id.resize(id_len);
  in.read(set.model_id.data(), id_len);
  const auto method = get<std::uint8_t>(in, path);
  const auto mode = get<std::uint8_t>(in, path);
  if (method > 2 || mode > 1) fail(ErrorKind::ParseError, path.string() + ": bad method/mode");
  set.method.kind = static_cast<Method>(method);
  set.mode = static_cast<AttributionMode>(mode);
  set.method.epsilon = get<double>(in, path);
  set.probe_checksum.resize(64);
  in.read(set.probe_checksum.data(), 64);
  const auto n = get<std::uint64_t>(in, path);
  set.probe_shape.resize(3);
  for (auto& e : set.probe_shape) e = get<std::uint32_t>(in, path);
  set.passes = get<std::uint64_t>(in, path);
  const std::size_t per_map = num_elements(set.probe_shape);
  set.maps.reserve(n);
  for (std::uint64_t j = 0; j < n; ++j) {
    std::vector<float> raw(per_map);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!in) fail(ErrorKind::ParseError, path.string() + ": truncated attribution cache");
    set.maps.emplace_back(set.probe_shape, std::vector<double>(raw.begin(), raw.end()));
  }
  return set;
}

Tensor heatmap(const Tensor& map) {
  if (map.rank() != 3) fail(ErrorKind::ShapeMismatch, "heatmap needs a [W,H,C] map");
  const std::size_t w = map.shape()[0], h = map.shape()[1], c = map.shape()[2];
  Tensor out({w, h, 1});
  for (std::size_t p = 0; p < w * h; ++p) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += map[p * c + ch];
    out[p] = acc;
  }
  const auto [lo, hi] = std::minmax_element(out.data().begin(), out.data().end());
  const double min = *lo, range = *hi - *lo;
  for (auto& v : out.data()) v = range > 0.0 ? (v - min) / range : 0.0;
  return out;
}

void write_heatmap_pgm(const Tensor& map, const fs::path& path) {
  write_pnm(heatmap(map), path);
}

}  // namespace modelspace
