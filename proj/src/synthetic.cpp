#include "modelspace/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "modelspace/error.hpp"
#include "modelspace/random.hpp"

namespace modelspace {

namespace fs = std::filesystem;

std::string_view to_string(ArchitectureTemplate t) {
  return t == ArchitectureTemplate::SmallConv ? "small_conv" : "mlp";
}

ArchitectureTemplate architecture_from_string(std::string_view name) {
  if (name == "small_conv") return ArchitectureTemplate::SmallConv;
  if (name == "mlp") return ArchitectureTemplate::Mlp;
  fail(ErrorKind::InvalidArgument, "unknown architecture '" + std::string(name) + "'");
}

void FamilySpec::validate() const {
  if (groups < 2) fail(ErrorKind::InvalidArgument, "a family needs at least 2 groups");
  if (models_per_group < 1) fail(ErrorKind::InvalidArgument, "models_per_group must be >= 1");
  if (!(sigma >= 0.0)) fail(ErrorKind::InvalidArgument, "sigma must be >= 0");
  if (input_channels != 1 && input_channels != 3) {
    fail(ErrorKind::UnsupportedChannels, "input channels must be 1 or 3");
  }
  const std::size_t smallest = vary_input_size ? input_size * 3 / 4 : input_size;
  if (architecture == ArchitectureTemplate::SmallConv && (smallest < 4 || input_size % 4 != 0 ||
                                                          smallest % 4 != 0)) {
    fail(ErrorKind::InvalidArgument, "small_conv needs input sizes divisible by 4");
  }
  if (smallest < 1) fail(ErrorKind::InvalidArgument, "input size too small");
}

std::string member_id(std::size_t group, std::size_t member) {
  return "g" + std::to_string(group) + "_m" + std::to_string(member);
}

std::size_t group_of(const std::string& id) {
  if (id.size() < 2 || id[0] != 'g') fail(ErrorKind::InvalidArgument, "not a family id: " + id);
  return std::stoul(id.substr(1, id.find('_') - 1));
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t group, std::uint64_t member) {
  return mix(mix(mix(seed) ^ group) ^ (member + 0x51ed2701ULL));
}

// Layer skeleton of a template at a given input size; parameters unset.
std::vector<LayerSpec> skeleton(ArchitectureTemplate arch, std::size_t size, std::size_t channels) {
  std::vector<LayerSpec> layers;
  if (arch == ArchitectureTemplate::SmallConv) {
    layers.push_back(LayerSpec::conv2d(Tensor({6, 3, 3, channels}), Tensor({6}), 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::conv2d(Tensor({8, 3, 3, 6}), Tensor({8}), 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::avgpool(2, 2));
    layers.push_back(LayerSpec::flatten());
    const std::size_t s = size / 4;
    layers.push_back(LayerSpec::dense(Tensor({16, s * s * 8}), Tensor({16})));
    layers.push_back(LayerSpec::tanh());
  } else {
    layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(Tensor({32, size * size * channels}), Tensor({32})));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(Tensor({16, 32}), Tensor({16})));
    layers.push_back(LayerSpec::tanh());
  }
  return layers;
}

double fan_in(const LayerSpec& l) {
  const auto& s = l.weight.shape();
  return l.kind == LayerKind::Dense ? static_cast<double>(s[1])
                                    : static_cast<double>(s[1] * s[2] * s[3]);
}

void fill_normal(Tensor& t, Rng& rng, double scale) {
  for (auto& v : t.data()) v = rng.normal() * scale;
}

}  // namespace

std::vector<ModelSpec> generate_family(const FamilySpec& spec) {
  spec.validate();
  std::vector<ModelSpec> models;
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const std::size_t size =
        spec.vary_input_size && g % 2 == 1 ? spec.input_size * 3 / 4 : spec.input_size;
    // Group base weights.
    auto base = skeleton(spec.architecture, size, spec.input_channels);
    Rng group_rng(stream_seed(spec.seed, g, 0));
    for (auto& l : base) {
      if (!has_parameters(l.kind)) continue;
      fill_normal(l.weight, group_rng, std::sqrt(2.0 / fan_in(l)));
      fill_normal(l.bias, group_rng, 0.05);
    }
    for (std::size_t m = 0; m < spec.models_per_group; ++m) {
      auto layers = base;
      Rng member_rng(stream_seed(spec.seed, g, m + 1));
      std::size_t parametric = 0;
      for (auto& l : layers) {
        if (!has_parameters(l.kind)) continue;
        if (parametric++ < spec.shared_depth) continue;
        const double w_scale = spec.sigma * std::sqrt(2.0 / fan_in(l));
        for (auto& v : l.weight.data()) v += member_rng.normal() * w_scale;
        for (auto& v : l.bias.data()) v += member_rng.normal() * spec.sigma * 0.05;
      }
      PreprocSpec pre;
      pre.width = pre.height = size;
      pre.channels = spec.input_channels;
      pre.mean.assign(spec.input_channels, 0.5);
      pre.std.assign(spec.input_channels, 0.25);
      pre.channel_policy = ChannelPolicy::ReplicateGray;
      ModelSpec model{member_id(g, m), "task" + std::to_string(g), pre,
                      round_to_float32(Graph(pre.input_shape(), std::move(layers))), ""};
      model.weights_checksum = compute_weights_checksum(model);
      models.push_back(std::move(model));
    }
  }
  return models;
}

std::vector<fs::path> write_family(const FamilySpec& spec, const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const auto& m : generate_family(spec)) {
    paths.push_back(dir / m.id);
    save_model(m, paths.back());
  }
  return paths;
}

ProbeSet synthetic_probe(std::size_t count, const Shape& shape, std::uint64_t seed) {
  if (count < 1) fail(ErrorKind::EmptyProbe, "synthetic probe needs at least one image");
  if (shape.size() != 3 || (shape[2] != 1 && shape[2] != 3) || shape[0] == 0 || shape[1] == 0) {
    fail(ErrorKind::InvalidArgument, "probe shape must be [W,H,C] with C in {1,3}");
  }
  const std::size_t w = shape[0], h = shape[1], c = shape[2];
  ProbeSet probe;
  probe.name = "synthetic";
  probe.shape = shape;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(stream_seed(seed, 0x9ba5e, i));
    Tensor img(shape);
    std::vector<double> offset(c), gx(c), gy(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      offset[ch] = rng.uniform(0.2, 0.8);
      gx[ch] = rng.uniform(-0.3, 0.3);
      gy[ch] = rng.uniform(-0.3, 0.3);
    }
    struct Blob {
      double cx, cy, r;
      std::vector<double> amp;
    };
    std::vector<Blob> blobs(3);
    for (auto& b : blobs) {
      b.cx = rng.uniform(0.0, 1.0);
      b.cy = rng.uniform(0.0, 1.0);
      b.r = rng.uniform(0.08, 0.3);
      for (std::size_t ch = 0; ch < c; ++ch) b.amp.push_back(rng.uniform(-0.5, 0.5));
    }
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      for (std::size_t y = 0; y < h; ++y) {
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double value = offset[ch] + gx[ch] * (u - 0.5) + gy[ch] * (v - 0.5);
          for (const auto& b : blobs) {
            const double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
            value += b.amp[ch] * std::exp(-d2 / (2.0 * b.r * b.r));
          }
          img[(x * h + y) * c + ch] = std::clamp(value, 0.0, 1.0);
        }
      }
    }
    probe.images.push_back(std::move(img));
    probe.sources.push_back("synthetic:" + std::to_string(seed) + ":" + std::to_string(i));
  }
  return probe;
}

RankingTable synthetic_oracle(const std::vector<std::string>& ids) {
  RankingTable table;
  table.targets = ids;
  for (const auto& target : ids) {
    std::vector<std::string> same, other;
    for (const auto& s : ids) {
      if (s == target) continue;
      (group_of(s) == group_of(target) ? same : other).push_back(s);
    }
    std::sort(same.begin(), same.end());
    std::sort(other.begin(), other.end());
    same.insert(same.end(), other.begin(), other.end());
    auto& row = table.rows[target];
    for (std::size_t r = 0; r < same.size(); ++r) {
      row.push_back({same[r], static_cast<double>(r + 1), r + 1});
    }
  }
  return table;
}

}  // namespace modelspace
