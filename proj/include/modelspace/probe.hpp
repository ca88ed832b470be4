#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modelspace/tensor.hpp"

namespace modelspace {

// The unlabeled image set shared by every model. Images are [W, H, C] with
// values in [0, 1], all resized to one common probe shape at load time.
struct ProbeSet {
  std::string name;
  Shape shape;  // [W, H, C]
  std::vector<Tensor> images;
  std::vector<std::string> sources;  // file (or generator tag) per image

  std::size_t size() const noexcept { return images.size(); }
  // SHA-256 over the shape and the exact image values, in order.
  std::string checksum() const;
  void validate() const;
};

// Binary PPM (P6) / PGM (P5), maxval up to 65535, scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
// Writes P5 for 1 channel, P6 for 3; values are clamped to [0, 1].
void write_pnm(const Tensor& image, const std::filesystem::path& path);

// Manifest: {"name": ..., "shape": [W, H, C], "images": ["a.ppm", ...]}
// with image paths relative to `dir`.
ProbeSet load_probe(const std::filesystem::path& dir, const nlohmann::json& manifest);
ProbeSet load_probe(const std::filesystem::path& manifest_path);
void save_probe(const ProbeSet& probe, const std::filesystem::path& dir);

// Deterministic subset of n images without replacement, kept in original
// index order.
ProbeSet sample_probe(const ProbeSet& probe, std::size_t n, std::uint64_t seed);
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed);

// Probe sizes mirrored from the size-sensitivity sweep.
inline constexpr std::size_t kProbeSizePresets[] = {100, 400, 800, 1200, 1600, 2000};

}  // namespace modelspace
