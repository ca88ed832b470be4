#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modelspace/model_io.hpp"
#include "modelspace/probe.hpp"
#include "modelspace/tensor.hpp"

namespace modelspace {

enum class Method { Saliency, GradientTimesInput, EpsilonLrp };

std::string_view to_string(Method method);
// Accepts the CLI spellings: saliency, gradxinput, elrp.
Method method_from_string(std::string_view name);

inline constexpr double kDefaultEpsilon = 1e-4;

struct AttributionMethod {
  Method kind = Method::EpsilonLrp;
  double epsilon = kDefaultEpsilon;  // used by EpsilonLrp only

  void validate() const;
  friend bool operator==(const AttributionMethod&, const AttributionMethod&) = default;
};

// single_pass seeds the backward pass with (1/D) * ones, so one
// forward-and-backward propagation yields the unit-averaged map. exact runs
// one backward pass per representation unit and averages the per-unit maps.
enum class AttributionMode { SinglePass, Exact };

std::string_view to_string(AttributionMode mode);
AttributionMode mode_from_string(std::string_view name);

struct AttributionMap {
  Tensor map;  // probe shape [W, H, C]
  std::string model_id;
  std::size_t image_index = 0;
  AttributionMethod method;
};

struct AttributionSet {
  std::string model_id;
  AttributionMethod method;
  AttributionMode mode = AttributionMode::SinglePass;
  std::string probe_checksum;
  Shape probe_shape;
  std::vector<Tensor> maps;  // one per probe image, in probe order
  std::uint64_t passes = 0;  // forward-and-backward propagations spent

  std::size_t size() const noexcept { return maps.size(); }
};

// Attribution of representation unit k at the model's own input resolution.
// `image` is a probe image; it is preprocessed first.
Tensor attribute_per_unit(const ModelSpec& model, const Tensor& image,
                          const AttributionMethod& method, std::size_t unit);

// Unit-averaged map from one forward-and-backward propagation, mapped back
// to the probe shape. For Saliency the absolute value is taken after
// averaging, which differs from the mean of per-unit absolute maps.
AttributionMap attribute_single_pass(const ModelSpec& model, const Tensor& image,
                                     const AttributionMethod& method,
                                     std::size_t image_index = 0);

// Mean over all units of attribute_per_unit, mapped back to the probe shape.
AttributionMap attribute_exact(const ModelSpec& model, const Tensor& image,
                               const AttributionMethod& method, std::size_t image_index = 0);

struct AttributeOptions {
  AttributionMode mode = AttributionMode::SinglePass;
  std::size_t exact_cap = 512;  // max D allowed in exact mode
  std::size_t threads = 1;
};

AttributionSet attribute_probe(const ModelSpec& model, const ProbeSet& probe,
                               const AttributionMethod& method,
                               const AttributeOptions& options = {});

// Rounds every map to float32, i.e. exactly what the cache file stores.
void quantize_to_float32(AttributionSet& set);

// Binary cache: header (magic, model id, method, epsilon, mode, probe
// checksum, N_p, W, H, C, passes) followed by little-endian float32 maps in
// probe order.
void save_attribution_set(const AttributionSet& set, const std::filesystem::path& path);
AttributionSet load_attribution_set(const std::filesystem::path& path);

// Channel-summed map, min-max normalised to [0, 1], as a [W, H, 1] image.
Tensor heatmap(const Tensor& map);
void write_heatmap_pgm(const Tensor& map, const std::filesystem::path& path);

}  // namespace modelspace
