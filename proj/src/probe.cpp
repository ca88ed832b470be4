#include "modelspace/probe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "modelspace/checksum.hpp"
#include "modelspace/error.hpp"
#include "modelspace/model_io.hpp"
#include "modelspace/random.hpp"

namespace modelspace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ProbeSet::checksum() const {
  Sha256 h;
  h.update_u64(shape.size());
  for (auto e : shape) h.update_u64(e);
  h.update_u64(images.size());
  for (const auto& img : images) {
    for (double v : img.data()) h.update_f64(v);
  }
  return h.hex_digest();
}

void ProbeSet::validate() const {
  if (images.empty()) fail(ErrorKind::EmptyProbe, "probe '" + name + "' has no images");
  if (shape.size() != 3) fail(ErrorKind::ShapeMismatch, "probe shape must be [W,H,C]");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      fail(ErrorKind::ShapeMismatch, "probe image " + std::to_string(i) + " has shape " +
                                         shape_str(images[i].shape()) + ", expected " +
                                         shape_str(shape));
    }
    for (double v : images[i].data()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        fail(ErrorKind::InvalidArgument,
             "probe image " + std::to_string(i) + " has values outside [0,1]");
      }
    }
  }
}

namespace {

// Reads the next whitespace-separated header token, skipping comments.
std::string header_token(std::istream& in, const fs::path& path) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      if (!token.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) fail(ErrorKind::DecodeError, path.string() + ": truncated header");
  return token;
}

std::size_t header_number(std::istream& in, const fs::path& path) {
  const auto token = header_token(in, path);
  if (!std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(c); })) {
    fail(ErrorKind::DecodeError, path.string() + ": bad header value '" + token + "'");
  }
  return std::stoul(token);
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::DecodeError, path.string() + ": cannot open");
  const auto magic = header_token(in, path);
  std::size_t channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    fail(ErrorKind::DecodeError, path.string() + ": unsupported format '" + magic + "'");
  }
  const auto width = header_number(in, path);
  const auto height = header_number(in, path);
  const auto maxval = header_number(in, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    fail(ErrorKind::DecodeError, path.string() + ": bad dimensions or maxval");
  }
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(width * height * channels * bytes_per_sample);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    fail(ErrorKind::DecodeError, path.string() + ": truncated pixel data");
  }
  Tensor image({width, height, channels});
  const auto denom = static_cast<double>(maxval);
  // File order is row-major over (y, x); tensor order is (x, y).
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t s = (y * width + x) * channels + c;
        const unsigned value = bytes_per_sample == 2 ? (raw[2 * s] << 8) | raw[2 * s + 1]
                                                     : raw[s];
        if (value > maxval) fail(ErrorKind::DecodeError, path.string() + ": sample > maxval");
        image[(x * height + y) * channels + c] = static_cast<double>(value) / denom;
      }
    }
  }
  return image;
}

void write_pnm(const Tensor& image, const fs::path& path) {
  if (image.rank() != 3 || (image.shape()[2] != 1 && image.shape()[2] != 3)) {
    fail(ErrorKind::UnsupportedChannels, "write_pnm needs [W,H,1] or [W,H,3], got " +
                                             shape_str(image.shape()));
  }
  const std::size_t w = image.shape()[0], h = image.shape()[1], c = image.shape()[2];
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(w * h * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(x * h + y) * c + ch], 0.0, 1.0);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(v * 255.0 + 0.5);
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

ProbeSet load_probe(const fs::path& dir, const json& manifest) {
  ProbeSet probe;
  try {
    probe.name = manifest.value("name", std::string("probe"));
    probe.shape = manifest.at("shape").get<Shape>();
    probe.sources = manifest.at("images").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, std::string("probe manifest: ") + e.what());
  }
  if (probe.shape.size() != 3 || probe.shape[0] == 0 || probe.shape[1] == 0 ||
      (probe.shape[2] != 1 && probe.shape[2] != 3)) {
    fail(ErrorKind::ParseError, "probe shape must be [W,H,C] with C in {1,3}, got " +
                                    shape_str(probe.shape));
  }
  if (probe.sources.empty()) fail(ErrorKind::EmptyProbe, "probe manifest lists no images");
  probe.images.reserve(probe.sources.size());
  for (const auto& src : probe.sources) {
    Tensor img = read_pnm(dir / src);
    img = convert_channels(resize_bilinear(img, probe.shape[0], probe.shape[1]), probe.shape[2]);
    // Bilinear weights are convex, but guard against 1-ulp excursions.
    for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
    probe.images.push_back(std::move(img));
  }
  return probe;
}

ProbeSet load_probe(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, manifest_path.string() + ": " + e.what());
  }
  return load_probe(manifest_path.parent_path(), manifest);
}

void save_probe(const ProbeSet& probe, const fs::path& dir) {
  probe.validate();
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.%s", i, probe.shape[2] == 3 ? "ppm" : "pgm");
    write_pnm(probe.images[i], dir / name);
    files.emplace_back(name);
  }
  const json manifest = {{"name", probe.name}, {"shape", probe.shape}, {"images", files}};
  std::ofstream out(dir / "probe.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::IoError, "cannot write probe manifest in " + dir.string());
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed) {
  if (n < 1 || n > population) {
    fail(ErrorKind::BadSampleSize, "sample size " + std::to_string(n) +
                                       " outside [1, " + std::to_string(population) + "]");
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n slots become the sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ProbeSet sample_probe(const ProbeSet& probe, std::size_t n, std::uint64_t seed) {
  ProbeSet out;
  out.name = probe.name;
  out.shape = probe.shape;
  for (auto i : sample_indices(probe.size(), n, seed)) {
    out.images.push_back(probe.images[i]);
    out.sources.push_back(probe.sources[i]);
  }
  return out;
}

}  // namespace modelspace
