#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "modelspace/tensor.hpp"

namespace modelspace {

enum class LayerKind { Dense, Conv2d, Relu, Sigmoid, Tanh, AvgPool, MaxPool, Flatten };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// Element-wise layers whose local derivative the epsilon-LRP rule rewrites.
bool is_nonlinearity(LayerKind kind);
bool has_parameters(LayerKind kind);

// One layer of a chain.
//  dense:   weight [out, in], bias [out]; input of any rank with `in` elements.
//  conv2d:  weight [out_c, kw, kh, in_c], bias [out_c]; input [W, H, in_c].
//  pools:   square window, no padding; input [W, H, C].
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 1;

  static LayerSpec dense(Tensor weight, Tensor bias);
  static LayerSpec conv2d(Tensor weight, Tensor bias, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec relu() { return of_kind(LayerKind::Relu); }
  static LayerSpec sigmoid() { return of_kind(LayerKind::Sigmoid); }
  static LayerSpec tanh() { return of_kind(LayerKind::Tanh); }
  static LayerSpec flatten() { return of_kind(LayerKind::Flatten); }
  static LayerSpec avgpool(std::size_t window, std::size_t stride);
  static LayerSpec maxpool(std::size_t window, std::size_t stride);
  static LayerSpec of_kind(LayerKind kind) {
    LayerSpec s;
    s.kind = kind;
    return s;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Returns the output shape of every layer, or throws ShapeMismatch naming the
// offending layer index.
std::vector<Shape> infer_shapes(const Shape& input, const std::vector<LayerSpec>& layers);

// A validated chain of layers. Immutable once built.
class Graph {
 public:
  Graph(Shape input_shape, std::vector<LayerSpec> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  const std::vector<Shape>& layer_shapes() const noexcept { return shapes_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t representation_dim() const noexcept { return dim_; }
  std::size_t parameter_count() const noexcept;
  bool has_nonlinearity() const noexcept;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::size_t dim_ = 0;
};

// Activations cached by one forward pass: values[i] is the input of layer i
// and values[i + 1] its output.
class TapeState {
 public:
  explicit TapeState(std::vector<Tensor> values) : values_(std::move(values)) {}

  const Tensor& layer_input(std::size_t layer) const { return values_.at(layer); }
  const Tensor& layer_output(std::size_t layer) const { return values_.at(layer + 1); }
  std::size_t layer_count() const noexcept { return values_.size() - 1; }

 private:
  std::vector<Tensor> values_;
};

struct ForwardResult {
  Tensor representation;  // flattened, shape [D]
  TapeState tape;
};

ForwardResult forward(const Graph& graph, const Tensor& input);

// Vector-Jacobian product of the representation at the graph input:
// d(seed . R)/dx. `seed` must hold exactly D elements.
Tensor backward(const Graph& graph, const TapeState& tape, const Tensor& seed);

// As backward, except each nonlinearity's derivative f'(z) is replaced by
// f(z) / (z + epsilon * sign(z)) with sign(0) = +1. Pooling routes as in
// backward.
Tensor backward_modified(const Graph& graph, const TapeState& tape, const Tensor& seed,
                         double epsilon);

}  // namespace modelspace
