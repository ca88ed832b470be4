#include "modelspace/graph.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "modelspace/error.hpp"

namespace modelspace {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::Relu, LayerKind::Sigmoid,
                    LayerKind::Tanh, LayerKind::AvgPool, LayerKind::MaxPool,
                    LayerKind::Flatten}) {
    if (to_string(kind) == name) return kind;
  }
  fail(ErrorKind::ParseError, "unknown layer kind '" + std::string(name) + "'");
}

bool is_nonlinearity(LayerKind kind) {
  return kind == LayerKind::Relu || kind == LayerKind::Sigmoid || kind == LayerKind::Tanh;
}

bool has_parameters(LayerKind kind) {
  return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
}

LayerSpec LayerSpec::dense(Tensor weight, Tensor bias) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  return s;
}

LayerSpec LayerSpec::conv2d(Tensor weight, Tensor bias, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::avgpool(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::AvgPool;
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t window, std::size_t stride) {
  LayerSpec s = avgpool(window, stride);
  s.kind = LayerKind::MaxPool;
  return s;
}

namespace {

[[noreturn]] void mismatch(std::size_t layer, const std::string& expected,
                           const std::string& got) {
  fail(ErrorKind::ShapeMismatch, "layer " + std::to_string(layer) + ": expected " +
                                     expected + ", got " + got);
}

Shape infer_one(std::size_t index, const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      const auto& w = layer.weight.shape();
      if (w.size() != 2) mismatch(index, "rank-2 dense weight", shape_str(w));
      if (layer.bias.shape() != Shape{w[0]}) {
        mismatch(index, "bias " + shape_str({w[0]}), shape_str(layer.bias.shape()));
      }
      if (num_elements(in) != w[1]) {
        mismatch(index, "input with " + std::to_string(w[1]) + " elements", shape_str(in));
      }
      return {w[0]};
    }
    case LayerKind::Conv2d: {
      const auto& w = layer.weight.shape();
      if (w.size() != 4) mismatch(index, "rank-4 conv weight [out,kw,kh,in]", shape_str(w));
      if (layer.stride < 1) mismatch(index, "stride >= 1", std::to_string(layer.stride));
      if (in.size() != 3) mismatch(index, "input [W,H,C]", shape_str(in));
      if (in[2] != w[3]) {
        mismatch(index, std::to_string(w[3]) + " input channels", shape_str(in));
      }
      if (layer.bias.shape() != Shape{w[0]}) {
        mismatch(index, "bias " + shape_str({w[0]}), shape_str(layer.bias.shape()));
      }
      const std::size_t pw = in[0] + 2 * layer.padding;
      const std::size_t ph = in[1] + 2 * layer.padding;
      if (pw < w[1] || ph < w[2]) {
        mismatch(index, "padded input at least kernel " + shape_str({w[1], w[2]}),
                 shape_str(in));
      }
      return {(pw - w[1]) / layer.stride + 1, (ph - w[2]) / layer.stride + 1, w[0]};
    }
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
      if (layer.window < 1) mismatch(index, "window >= 1", std::to_string(layer.window));
      if (layer.stride < 1) mismatch(index, "stride >= 1", std::to_string(layer.stride));
      if (in.size() != 3) mismatch(index, "input [W,H,C]", shape_str(in));
      if (in[0] < layer.window || in[1] < layer.window) {
        mismatch(index, "spatial extent >= window " + std::to_string(layer.window),
                 shape_str(in));
      }
      return {(in[0] - layer.window) / layer.stride + 1,
              (in[1] - layer.window) / layer.stride + 1, in[2]};
    }
    case LayerKind::Flatten:
      return {num_elements(in)};
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      return in;
  }
  mismatch(index, "known layer kind", "unknown");
}

// Shared geometry for conv/pool index arithmetic on [W, H, C] tensors.
struct Grid {
  std::size_t w, h, c;
  std::size_t at(std::size_t x, std::size_t y, std::size_t ch) const {
    return (x * h + y) * c + ch;
  }
};

Grid grid_of(const Shape& s) { return {s[0], s[1], s[2]}; }

void dense_forward(const LayerSpec& l, const Tensor& in, Tensor& out) {
  const std::size_t n_out = l.weight.shape()[0];
  const std::size_t n_in = l.weight.shape()[1];
  const auto w = l.weight.data();
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = l.bias[o];
    const double* row = w.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

void dense_backward(const LayerSpec& l, const Tensor& grad_out, Tensor& grad_in) {
  const std::size_t n_out = l.weight.shape()[0];
  const std::size_t n_in = l.weight.shape()[1];
  const auto w = l.weight.data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double g = grad_out[o];
    if (g == 0.0) continue;
    const double* row = w.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) grad_in[i] += row[i] * g;
  }
}

// Calls fn(out_index, in_index, weight_index) for every contributing
// (output, input tap) pair of a zero-padded convolution.
template <typename Fn>
void conv_taps(const LayerSpec& l, const Shape& in_shape, const Shape& out_shape, Fn&& fn) {
  const auto& ws = l.weight.shape();
  const std::size_t kw = ws[1], kh = ws[2], cin = ws[3];
  const Grid gi = grid_of(in_shape), go = grid_of(out_shape);
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  for (std::size_t ox = 0; ox < go.w; ++ox) {
    for (std::size_t oy = 0; oy < go.h; ++oy) {
      for (std::size_t i = 0; i < kw; ++i) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * l.stride + i) - pad;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(gi.w)) continue;
        for (std::size_t j = 0; j < kh; ++j) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * l.stride + j) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gi.h)) continue;
          const std::size_t in_base = gi.at(static_cast<std::size_t>(ix),
                                            static_cast<std::size_t>(iy), 0);
          for (std::size_t o = 0; o < go.c; ++o) {
            const std::size_t w_base = ((o * kw + i) * kh + j) * cin;
            const std::size_t out_index = go.at(ox, oy, o);
            for (std::size_t c = 0; c < cin; ++c) fn(out_index, in_base + c, w_base + c);
          }
        }
      }
    }
  }
}

// Calls fn(out_index, window_indices) for each pooling window.
template <typename Fn>
void pool_windows(const LayerSpec& l, const Shape& in_shape, const Shape& out_shape, Fn&& fn) {
  const Grid gi = grid_of(in_shape), go = grid_of(out_shape);
  std::vector<std::size_t> idx(l.window * l.window);
  for (std::size_t ox = 0; ox < go.w; ++ox) {
    for (std::size_t oy = 0; oy < go.h; ++oy) {
      for (std::size_t c = 0; c < go.c; ++c) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < l.window; ++i) {
          for (std::size_t j = 0; j < l.window; ++j) {
            idx[n++] = gi.at(ox * l.stride + i, oy * l.stride + j, c);
          }
        }
        fn(go.at(ox, oy, c), std::as_const(idx));
      }
    }
  }
}

// First maximum in window scan order wins ties.
std::size_t argmax_in(const Tensor& in, const std::vector<std::size_t>& idx) {
  std::size_t best = idx[0];
  for (std::size_t k = 1; k < idx.size(); ++k) {
    if (in[idx[k]] > in[best]) best = idx[k];
  }
  return best;
}

double activate(LayerKind kind, double z) {
  switch (kind) {
    case LayerKind::Relu: return z > 0.0 ? z : 0.0;
    case LayerKind::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case LayerKind::Tanh: return std::tanh(z);
    default: return z;
  }
}

double derivative(LayerKind kind, double z, double fz) {
  switch (kind) {
    case LayerKind::Relu: return z > 0.0 ? 1.0 : 0.0;
    case LayerKind::Sigmoid: return fz * (1.0 - fz);
    case LayerKind::Tanh: return 1.0 - fz * fz;
    default: return 1.0;
  }
}

Tensor layer_forward(const LayerSpec& l, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  switch (l.kind) {
    case LayerKind::Dense:
      dense_forward(l, in, out);
      break;
    case LayerKind::Conv2d: {
      const std::size_t cout = out_shape[2];
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = l.bias[k % cout];
      const auto w = l.weight.data();
      conv_taps(l, in.shape(), out_shape,
                [&](std::size_t o, std::size_t i, std::size_t wi) { out[o] += w[wi] * in[i]; });
      break;
    }
    case LayerKind::AvgPool: {
      const double inv = 1.0 / static_cast<double>(l.window * l.window);
      pool_windows(l, in.shape(), out_shape, [&](std::size_t o, const auto& idx) {
        double acc = 0.0;
        for (auto i : idx) acc += in[i];
        out[o] = acc * inv;
      });
      break;
    }
    case LayerKind::MaxPool:
      pool_windows(l, in.shape(), out_shape,
                   [&](std::size_t o, const auto& idx) { out[o] = in[argmax_in(in, idx)]; });
      break;
    case LayerKind::Flatten:
      return in.reshaped(out_shape);
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = activate(l.kind, in[k]);
      break;
  }
  return out;
}

enum class BackwardRule { Gradient, Modified };

Tensor layer_backward(const LayerSpec& l, const Tensor& in, const Tensor& out,
                      const Tensor& grad_out, BackwardRule rule, double epsilon) {
  Tensor grad_in(in.shape());
  switch (l.kind) {
    case LayerKind::Dense:
      dense_backward(l, grad_out, grad_in);
      break;
    case LayerKind::Conv2d: {
      const auto w = l.weight.data();
      conv_taps(l, in.shape(), out.shape(), [&](std::size_t o, std::size_t i, std::size_t wi) {
        grad_in[i] += w[wi] * grad_out[o];
      });
      break;
    }
    case LayerKind::AvgPool: {
      const double inv = 1.0 / static_cast<double>(l.window * l.window);
      pool_windows(l, in.shape(), out.shape(), [&](std::size_t o, const auto& idx) {
        for (auto i : idx) grad_in[i] += grad_out[o] * inv;
      });
      break;
    }
    case LayerKind::MaxPool:
      pool_windows(l, in.shape(), out.shape(), [&](std::size_t o, const auto& idx) {
        grad_in[argmax_in(in, idx)] += grad_out[o];
      });
      break;
    case LayerKind::Flatten:
      return grad_out.reshaped(in.shape());
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      for (std::size_t k = 0; k < in.size(); ++k) {
        const double z = in[k];
        const double fz = out[k];
        double local;
        if (rule == BackwardRule::Modified) {
          const double sign = z >= 0.0 ? 1.0 : -1.0;
          local = fz / (z + epsilon * sign);
        } else {
          local = derivative(l.kind, z, fz);
        }
        grad_in[k] = local * grad_out[k];
      }
      break;
  }
  return grad_in;
}

Tensor run_backward(const Graph& graph, const TapeState& tape, const Tensor& seed,
                    BackwardRule rule, double epsilon) {
  if (tape.layer_count() != graph.layers().size()) {
    fail(ErrorKind::ShapeMismatch, "tape has " + std::to_string(tape.layer_count()) +
                                       " layers, graph has " +
                                       std::to_string(graph.layers().size()));
  }
  if (seed.size() != graph.representation_dim()) {
    fail(ErrorKind::ShapeMismatch, "seed " + shape_str(seed.shape()) +
                                       " does not match representation [" +
                                       std::to_string(graph.representation_dim()) + "]");
  }
  Tensor grad = seed.reshaped(graph.output_shape());
  const auto& layers = graph.layers();
  for (std::size_t i = layers.size(); i-- > 0;) {
    grad = layer_backward(layers[i], tape.layer_input(i), tape.layer_output(i), grad, rule,
                          epsilon);
  }
  require_finite(grad, "input gradient");
  return grad;
}

}  // namespace

std::vector<Shape> infer_shapes(const Shape& input, const std::vector<LayerSpec>& layers) {
  if (layers.empty()) fail(ErrorKind::ShapeMismatch, "graph has no layers");
  for (auto e : input) {
    if (e == 0) fail(ErrorKind::ShapeMismatch, "zero extent in input " + shape_str(input));
  }
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape current = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    current = infer_one(i, layers[i], current);
    shapes.push_back(current);
  }
  return shapes;
}

Graph::Graph(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  shapes_ = infer_shapes(input_shape_, layers_);
  dim_ = num_elements(shapes_.back());
}

std::size_t Graph::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool Graph::has_nonlinearity() const noexcept {
  for (const auto& l : layers_) {
    if (is_nonlinearity(l.kind)) return true;
  }
  return false;
}

ForwardResult forward(const Graph& graph, const Tensor& input) {
  if (input.shape() != graph.input_shape()) {
    fail(ErrorKind::ShapeMismatch, "input " + shape_str(input.shape()) +
                                       " does not match graph input " +
                                       shape_str(graph.input_shape()));
  }
  require_finite(input, "graph input");
  const auto& layers = graph.layers();
  std::vector<Tensor> values;
  values.reserve(layers.size() + 1);
  values.push_back(input);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    values.push_back(layer_forward(layers[i], values.back(), graph.layer_shapes()[i]));
    require_finite(values.back(), "output of layer " + std::to_string(i));
  }
  Tensor representation = values.back().reshaped({graph.representation_dim()});
  return {std::move(representation), TapeState(std::move(values))};
}

Tensor backward(const Graph& graph, const TapeState& tape, const Tensor& seed) {
  return run_backward(graph, tape, seed, BackwardRule::Gradient, 0.0);
}

Tensor backward_modified(const Graph& graph, const TapeState& tape, const Tensor& seed,
                         double epsilon) {
  if (!(epsilon > 0.0)) {
    fail(ErrorKind::InvalidArgument, "epsilon must be positive");
  }
  return run_backward(graph, tape, seed, BackwardRule::Modified, epsilon);
}

}  // namespace modelspace
