#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modelspace/model_io.hpp"
#include "modelspace/model_space.hpp"
#include "modelspace/probe.hpp"

namespace modelspace {

enum class ArchitectureTemplate {
  SmallConv,  // conv3x3-relu-maxpool-conv3x3-relu-avgpool-flatten-dense-tanh
  Mlp,        // flatten-dense-relu-dense-tanh
};

std::string_view to_string(ArchitectureTemplate t);
ArchitectureTemplate architecture_from_string(std::string_view name);

// A family of P groups. Members of a group share their first
// `shared_depth` parametric layers exactly; the remaining layers are the
// group's base weights plus noise of relative magnitude `sigma`. Groups are
// drawn independently.
struct FamilySpec {
  std::size_t groups = 4;
  std::size_t models_per_group = 3;
  std::size_t shared_depth = 1;
  double sigma = 0.05;
  ArchitectureTemplate architecture = ArchitectureTemplate::SmallConv;
  std::size_t input_size = 16;
  std::size_t input_channels = 3;
  bool vary_input_size = false;  // odd groups take 3/4-size inputs
  std::uint64_t seed = 1;

  void validate() const;
};

std::string member_id(std::size_t group, std::size_t member);

// Models ordered group-major; weights are float32-exact so saving and
// reloading reproduces them bit-for-bit.
std::vector<ModelSpec> generate_family(const FamilySpec& spec);
// Writes one bundle per model under dir/<id>; returns the bundle paths.
std::vector<std::filesystem::path> write_family(const FamilySpec& spec,
                                                const std::filesystem::path& dir);

// Group index of every model id produced by generate_family.
std::size_t group_of(const std::string& id);

// Smooth random images (gradient background plus Gaussian blobs) in [0, 1].
ProbeSet synthetic_probe(std::size_t count, const Shape& shape, std::uint64_t seed);

// Ground-truth ranking for a generated family: same-group sources first,
// then the rest, each block in ascending id order.
RankingTable synthetic_oracle(const std::vector<std::string>& ids);

}  // namespace modelspace
