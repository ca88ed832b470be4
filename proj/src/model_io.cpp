#include "modelspace/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "modelspace/checksum.hpp"
#include "modelspace/error.hpp"

namespace modelspace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ChannelPolicy policy) {
  return policy == ChannelPolicy::ReplicateGray ? "replicate-gray" : "average-to-gray";
}

ChannelPolicy channel_policy_from_string(std::string_view name) {
  if (name == "replicate-gray") return ChannelPolicy::ReplicateGray;
  if (name == "average-to-gray") return ChannelPolicy::AverageToGray;
  fail(ErrorKind::ParseError, "unknown channel policy '" + std::string(name) + "'");
}

void PreprocSpec::validate() const {
  if (width < 1 || height < 1 || channels < 1) {
    fail(ErrorKind::InvalidArgument, "preprocessing extents must be >= 1");
  }
  if (channels != 1 && channels != 3) {
    fail(ErrorKind::UnsupportedChannels,
         "model channels must be 1 or 3, got " + std::to_string(channels));
  }
  if (mean.size() != channels || std.size() != channels) {
    fail(ErrorKind::InvalidArgument, "mean/std must have one entry per channel");
  }
  for (double s : std) {
    if (!(s > 0.0)) fail(ErrorKind::InvalidArgument, "std must be strictly positive");
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t width, std::size_t height) {
  if (image.rank() != 3) {
    fail(ErrorKind::ShapeMismatch, "expected [W,H,C] image, got " + shape_str(image.shape()));
  }
  const std::size_t in_w = image.shape()[0], in_h = image.shape()[1], c = image.shape()[2];
  if (in_w == width && in_h == height) return image;

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      result[d] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return result;
  };
  const auto tx = taps(in_w, width);
  const auto ty = taps(in_h, height);

  Tensor out({width, height, c});
  auto at = [&](std::size_t x, std::size_t y, std::size_t ch) {
    return image[(x * in_h + y) * c + ch];
  };
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) {
      const auto& [x0, x1, u] = tx[x];
      const auto& [y0, y1, v] = ty[y];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - v) * at(x0, y0, ch) + v * at(x0, y1, ch);
        const double bottom = (1.0 - v) * at(x1, y0, ch) + v * at(x1, y1, ch);
        out[(x * height + y) * c + ch] = (1.0 - u) * top + u * bottom;
      }
    }
  }
  return out;
}

Tensor convert_channels(const Tensor& image, std::size_t channels) {
  const std::size_t w = image.shape()[0], h = image.shape()[1], c = image.shape()[2];
  if (c == channels) return image;
  if (c != 1 && c != 3) {
    fail(ErrorKind::UnsupportedChannels, "image has " + std::to_string(c) + " channels");
  }
  if (channels != 1 && channels != 3) {
    fail(ErrorKind::UnsupportedChannels, "cannot convert to " + std::to_string(channels) +
                                             " channels");
  }
  Tensor out({w, h, channels});
  const std::size_t pixels = w * h;
  if (c == 1) {
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t ch = 0; ch < channels; ++ch) out[p * channels + ch] = image[p];
    }
  } else {
    for (std::size_t p = 0; p < pixels; ++p) {
      out[p] = (image[3 * p] + image[3 * p + 1] + image[3 * p + 2]) / 3.0;
    }
  }
  return out;
}

Tensor preprocess(const PreprocSpec& spec, const Tensor& image) {
  if (image.rank() != 3) {
    fail(ErrorKind::ShapeMismatch, "expected [W,H,C] image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.shape()[2];
  if (c != 1 && c != 3) {
    fail(ErrorKind::UnsupportedChannels, "image has " + std::to_string(c) + " channels");
  }
  Tensor x = convert_channels(resize_bilinear(image, spec.width, spec.height), spec.channels);
  const std::size_t ch = spec.channels;
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = (x[k] - spec.mean[k % ch]) / spec.std[k % ch];
  }
  return x;
}

Tensor unpreprocess_attribution(const PreprocSpec& spec, const Tensor& attribution,
                                const Shape& probe_shape) {
  if (attribution.shape() != spec.input_shape()) {
    fail(ErrorKind::ShapeMismatch, "attribution " + shape_str(attribution.shape()) +
                                       " does not match model input " +
                                       shape_str(spec.input_shape()));
  }
  if (probe_shape.size() != 3) {
    fail(ErrorKind::ShapeMismatch, "probe shape must be [W,H,C], got " + shape_str(probe_shape));
  }
  return convert_channels(resize_bilinear(attribution, probe_shape[0], probe_shape[1]),
                          probe_shape[2]);
}

Graph round_to_float32(const Graph& graph) {
  auto layers = graph.layers();
  for (auto& l : layers) {
    for (auto& v : l.weight.data()) v = static_cast<double>(static_cast<float>(v));
    for (auto& v : l.bias.data()) v = static_cast<double>(static_cast<float>(v));
  }
  return Graph(graph.input_shape(), std::move(layers));
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void append_f32(std::vector<std::byte>& blob, double value) {
  const auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(value)));
  const auto* p = reinterpret_cast<const std::byte*>(&bits);
  blob.insert(blob.end(), p, p + 4);
}

double read_f32(const std::byte* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  return static_cast<double>(std::bit_cast<float>(to_little_endian(bits)));
}

json preproc_json(const PreprocSpec& p) {
  return {{"width", p.width},       {"height", p.height},
          {"channels", p.channels}, {"mean", p.mean},
          {"std", p.std},           {"channel_policy", std::string(to_string(p.channel_policy))}};
}

// Builds the manifest and (optionally) the weight blob for a model.
json build_manifest(const ModelSpec& model, std::vector<std::byte>* blob,
                    const std::string& weights_sha) {
  json layers = json::array();
  std::size_t offset = 0;
  auto blob_ref = [&](const Tensor& t) {
    json ref = {{"shape", t.shape()}, {"offset", offset}, {"length", 4 * t.size()}};
    offset += 4 * t.size();
    if (blob) {
      for (double v : t.data()) append_f32(*blob, v);
    }
    return ref;
  };
  for (const auto& l : model.graph.layers()) {
    json j = {{"kind", std::string(to_string(l.kind))}};
    switch (l.kind) {
      case LayerKind::Dense:
        j["weight"] = blob_ref(l.weight);
        j["bias"] = blob_ref(l.bias);
        break;
      case LayerKind::Conv2d:
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        j["weight"] = blob_ref(l.weight);
        j["bias"] = blob_ref(l.bias);
        break;
      case LayerKind::AvgPool:
      case LayerKind::MaxPool:
        j["window"] = l.window;
        j["stride"] = l.stride;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"format", "modelspace-bundle/1"},
          {"id", model.id},
          {"task", model.task},
          {"preproc", preproc_json(model.preproc)},
          {"layers", std::move(layers)},
          {"weights_file", "weights.bin"},
          {"weights_sha256", weights_sha}};
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorKind::ParseError, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, where + ": bad field '" + key + "': " + e.what());
  }
}

std::vector<std::byte> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

Tensor read_blob_tensor(const json& ref, const std::vector<std::byte>& blob,
                        const std::string& where) {
  const auto shape = field<Shape>(ref, "shape", where);
  const auto offset = field<std::size_t>(ref, "offset", where);
  const auto length = field<std::size_t>(ref, "length", where);
  for (auto e : shape) {
    if (e == 0) fail(ErrorKind::ParseError, where + ": zero extent in " + shape_str(shape));
  }
  if (length != 4 * num_elements(shape)) {
    fail(ErrorKind::ParseError, where + ": length " + std::to_string(length) +
                                    " bytes does not match shape " + shape_str(shape));
  }
  if (offset > blob.size() || length > blob.size() - offset) {
    fail(ErrorKind::ParseError, where + ": range [" + std::to_string(offset) + ", " +
                                    std::to_string(offset + length) +
                                    ") exceeds weights.bin size " + std::to_string(blob.size()));
  }
  std::vector<double> data(num_elements(shape));
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = read_f32(blob.data() + offset + 4 * k);
  return Tensor(shape, std::move(data));
}

}  // namespace

ModelSpec load_model(const fs::path& bundle_dir) {
  const fs::path manifest_path = bundle_dir / "manifest.json";
  json manifest;
  {
    std::ifstream in(manifest_path);
    if (!in) fail(ErrorKind::IoError, "cannot open " + manifest_path.string());
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::ParseError, manifest_path.string() + ": " + e.what());
    }
  }
  const std::string where = manifest_path.string();

  PreprocSpec pre;
  const json& pj = manifest.contains("preproc") ? manifest["preproc"] : json();
  if (!pj.is_object()) fail(ErrorKind::ParseError, where + ": missing 'preproc' object");
  pre.width = field<std::size_t>(pj, "width", where + " preproc");
  pre.height = field<std::size_t>(pj, "height", where + " preproc");
  pre.channels = field<std::size_t>(pj, "channels", where + " preproc");
  pre.mean = field<std::vector<double>>(pj, "mean", where + " preproc");
  pre.std = field<std::vector<double>>(pj, "std", where + " preproc");
  pre.channel_policy =
      channel_policy_from_string(field<std::string>(pj, "channel_policy", where + " preproc"));
  try {
    pre.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::UnsupportedChannels) throw;
    fail(ErrorKind::ParseError, where + ": " + e.what());
  }

  const auto weights_name = manifest.value("weights_file", std::string("weights.bin"));
  const auto blob = read_file(bundle_dir / weights_name);

  const json& lj = manifest.contains("layers") ? manifest["layers"] : json();
  if (!lj.is_array()) fail(ErrorKind::ParseError, where + ": missing 'layers' array");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < lj.size(); ++i) {
    const json& j = lj[i];
    const std::string lw = where + " layer " + std::to_string(i);
    LayerSpec l;
    l.kind = layer_kind_from_string(field<std::string>(j, "kind", lw));
    const std::string named = lw + " (" + std::string(to_string(l.kind)) + ")";
    if (has_parameters(l.kind)) {
      l.weight = read_blob_tensor(field<json>(j, "weight", named), blob, named + " weight");
      l.bias = read_blob_tensor(field<json>(j, "bias", named), blob, named + " bias");
    }
    if (l.kind == LayerKind::Conv2d) {
      l.stride = j.value("stride", std::size_t{1});
      l.padding = j.value("padding", std::size_t{0});
    }
    if (l.kind == LayerKind::AvgPool || l.kind == LayerKind::MaxPool) {
      l.window = field<std::size_t>(j, "window", named);
      l.stride = j.value("stride", l.window);
    }
    layers.push_back(std::move(l));
  }

  const std::string actual_sha = sha256_hex(blob);
  const auto declared_sha = field<std::string>(manifest, "weights_sha256", where);
  if (declared_sha != actual_sha) {
    fail(ErrorKind::ChecksumMismatch, where + ": weights.bin sha256 " + actual_sha +
                                          " != declared " + declared_sha);
  }

  return ModelSpec{field<std::string>(manifest, "id", where),
                   field<std::string>(manifest, "task", where), pre,
                   Graph(pre.input_shape(), std::move(layers)), actual_sha};
}

void save_model(const ModelSpec& model, const fs::path& bundle_dir) {
  model.preproc.validate();
  if (model.graph.input_shape() != model.preproc.input_shape()) {
    fail(ErrorKind::ShapeMismatch, "graph input " + shape_str(model.graph.input_shape()) +
                                       " != preprocessing shape " +
                                       shape_str(model.preproc.input_shape()));
  }
  std::vector<std::byte> blob;
  build_manifest(model, &blob, "");
  const json manifest = build_manifest(model, nullptr, sha256_hex(blob));

  fs::create_directories(bundle_dir);
  {
    std::ofstream out(bundle_dir / "weights.bin", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size()));
    if (!out) fail(ErrorKind::IoError, "failed to write weights for " + model.id);
  }
  std::ofstream out(bundle_dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::IoError, "failed to write manifest for " + model.id);
}

std::string compute_weights_checksum(const ModelSpec& model) {
  std::vector<std::byte> blob;
  build_manifest(model, &blob, "");
  return sha256_hex(blob);
}

std::string model_fingerprint(const ModelSpec& model) {
  return sha256_hex(build_manifest(model, nullptr, model.weights_checksum).dump());
}

}  // namespace modelspace
