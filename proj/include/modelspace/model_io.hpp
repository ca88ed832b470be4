#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "modelspace/graph.hpp"
#include "modelspace/tensor.hpp"

namespace modelspace {

// How images are converted when the probe channel count differs from the
// model's. Gray probes are always replicated into a colour model and colour
// probes are averaged into a gray model; the policy records which
// conversion the bundle was exported for.
enum class ChannelPolicy { ReplicateGray, AverageToGray };

std::string_view to_string(ChannelPolicy policy);
ChannelPolicy channel_policy_from_string(std::string_view name);

struct PreprocSpec {
  std::size_t width = 1;
  std::size_t height = 1;
  std::size_t channels = 1;
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel, > 0
  ChannelPolicy channel_policy = ChannelPolicy::ReplicateGray;

  Shape input_shape() const { return {width, height, channels}; }
  void validate() const;

  friend bool operator==(const PreprocSpec&, const PreprocSpec&) = default;
};

struct ModelSpec {
  std::string id;
  std::string task;
  PreprocSpec preproc;
  Graph graph;
  std::string weights_checksum;  // SHA-256 of weights.bin
};

// Resizes a [W, H, C] tensor with bilinear interpolation using half-pixel
// centre alignment; samples outside the source clamp to the border.
Tensor resize_bilinear(const Tensor& image, std::size_t width, std::size_t height);

// Converts a [W, H, C] tensor between 1 and 3 channels (replicate or average).
Tensor convert_channels(const Tensor& image, std::size_t channels);

// T_i: resize, channel conversion, then (x - mean) / std per channel.
Tensor preprocess(const PreprocSpec& spec, const Tensor& image);

// Geometric inverse of preprocess for attribution maps: resize back to the
// probe's (W, H) and map channels back. No de-normalisation is applied.
Tensor unpreprocess_attribution(const PreprocSpec& spec, const Tensor& attribution,
                                const Shape& probe_shape);

// Model bundle: <dir>/manifest.json + <dir>/weights.bin (little-endian
// float32). Weights are rounded to float32 on save.
ModelSpec load_model(const std::filesystem::path& bundle_dir);
void save_model(const ModelSpec& model, const std::filesystem::path& bundle_dir);

// Rounds every parameter to float32 precision, matching what a bundle stores.
Graph round_to_float32(const Graph& graph);

// SHA-256 of the weight blob save_model would write for this graph.
std::string compute_weights_checksum(const ModelSpec& model);

// Stable identity of a model (manifest content + weight checksum), used as
// a cache key.
std::string model_fingerprint(const ModelSpec& model);

}  // namespace modelspace
