#pragma once

// Helpers shared by the unit and acceptance tests: random graph generation
// and independent reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modelspace/graph.hpp"
#include "modelspace/model_io.hpp"
#include "modelspace/random.hpp"
#include "modelspace/tensor.hpp"

namespace testing {

using modelspace::Graph;
using modelspace::LayerKind;
using modelspace::LayerSpec;
using modelspace::Rng;
using modelspace::Shape;
using modelspace::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor normal_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal() * scale;
  return t;
}

inline double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double rel_l2(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  const double s = std::max(norm2(a), norm2(b));
  return s > 0.0 ? std::sqrt(d) / s : 0.0;
}

// max_i |a_i - b_i| / max(max_i |b_i|, tiny)
inline double rel_max(const Tensor& a, const Tensor& b) {
  double d = 0.0, s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(a[i] - b[i]));
    s = std::max(s, std::abs(b[i]));
  }
  return s > 0.0 ? d / s : d;
}

inline LayerSpec random_nonlinearity(Rng& rng) {
  switch (rng.below(3)) {
    case 0: return LayerSpec::relu();
    case 1: return LayerSpec::sigmoid();
    default: return LayerSpec::tanh();
  }
}

struct RandomGraphOptions {
  bool bias = true;
  std::size_t max_parameters = 200;
  std::size_t channels = 0;  // 0 = random in {1, 2, 3}
};

// Small random chain. `focus` cycles which layer kinds must appear so a
// sequence of calls covers every kind: 0 conv+maxpool, 1 conv+avgpool,
// 2 dense-only MLP, 3 conv without pooling.
inline Graph random_graph(Rng& rng, int focus, const RandomGraphOptions& opt = {}) {
  while (true) {
    const std::size_t w = 3 + rng.below(4), h = 3 + rng.below(4);
    const std::size_t c = opt.channels ? opt.channels : 1 + rng.below(3);
    const Shape input{w, h, c};
    std::vector<LayerSpec> layers;
    Shape cur = input;
    auto bias_of = [&](std::size_t n) {
      return opt.bias ? random_tensor({n}, rng, -0.5, 0.5) : Tensor({n});
    };
    if (focus % 4 != 2) {
      const std::size_t k = 1 + rng.below(3);
      const std::size_t pad = rng.below(2);
      const std::size_t stride = 1 + rng.below(2);
      const std::size_t oc = 1 + rng.below(3);
      if (cur[0] + 2 * pad < k || cur[1] + 2 * pad < k) continue;
      layers.push_back(LayerSpec::conv2d(
          normal_tensor({oc, k, k, c}, rng, 1.0 / std::sqrt(double(k * k * c))), bias_of(oc),
          stride, pad));
      cur = {(cur[0] + 2 * pad - k) / stride + 1, (cur[1] + 2 * pad - k) / stride + 1, oc};
      layers.push_back(random_nonlinearity(rng));
      if (focus % 4 < 2 && cur[0] >= 2 && cur[1] >= 2) {
        const std::size_t ps = 1 + rng.below(2);
        layers.push_back(focus % 4 == 0 ? LayerSpec::maxpool(2, ps) : LayerSpec::avgpool(2, ps));
        cur = {(cur[0] - 2) / ps + 1, (cur[1] - 2) / ps + 1, cur[2]};
      }
    }
    layers.push_back(LayerSpec::flatten());
    const std::size_t in = cur[0] * cur[1] * cur[2];
    const std::size_t hidden = 2 + rng.below(4);
    layers.push_back(LayerSpec::dense(normal_tensor({hidden, in}, rng, 1.0 / std::sqrt(double(in))),
                                      bias_of(hidden)));
    layers.push_back(random_nonlinearity(rng));
    if (focus % 4 == 2 || rng.below(2) == 0) {
      const std::size_t out = 2 + rng.below(4);
      layers.push_back(LayerSpec::dense(
          normal_tensor({out, hidden}, rng, 1.0 / std::sqrt(double(hidden))), bias_of(out)));
      layers.push_back(random_nonlinearity(rng));
    }
    Graph g(input, std::move(layers));
    if (g.parameter_count() <= opt.max_parameters) return g;
  }
}

// Identity preprocessing so model input == probe image.
inline modelspace::ModelSpec wrap_model(const std::string& id, const Graph& g) {
  modelspace::PreprocSpec p;
  p.width = g.input_shape()[0];
  p.height = g.input_shape()[1];
  p.channels = g.input_shape()[2];
  p.mean.assign(p.channels, 0.0);
  p.std.assign(p.channels, 1.0);
  modelspace::ModelSpec m{id, "task", p, g, ""};
  m.weights_checksum = modelspace::compute_weights_checksum(m);
  return m;
}

// Linear model R = W x over a [n, 1, 1] input.
inline modelspace::ModelSpec linear_model(const std::string& id, const Tensor& w) {
  const std::size_t out = w.shape()[0], in = w.shape()[1];
  Graph g({in, 1, 1}, {LayerSpec::flatten(), LayerSpec::dense(w, Tensor({out}))});
  return wrap_model(id, g);
}

// ---- Independent forward oracle: nested loops, no shared helpers. ----

inline double act(LayerKind k, double z) {
  switch (k) {
    case LayerKind::Relu: return z > 0 ? z : 0.0;
    case LayerKind::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case LayerKind::Tanh: return std::tanh(z);
    default: return z;
  }
}

inline std::vector<double> naive_forward(const Graph& g, const Tensor& x) {
  std::vector<double> cur(x.data().begin(), x.data().end());
  Shape s = g.input_shape();
  for (const auto& l : g.layers()) {
    switch (l.kind) {
      case LayerKind::Conv2d: {
        const std::size_t oc = l.weight.shape()[0], kw = l.weight.shape()[1],
                          kh = l.weight.shape()[2], ic = l.weight.shape()[3];
        const long W = long(s[0]), H = long(s[1]), P = long(l.padding), S = long(l.stride);
        const std::size_t ow = std::size_t((W + 2 * P - long(kw)) / S + 1);
        const std::size_t oh = std::size_t((H + 2 * P - long(kh)) / S + 1);
        std::vector<double> out(ow * oh * oc, 0.0);
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t o = 0; o < oc; ++o) {
              double acc = l.bias[o];
              for (std::size_t a = 0; a < kw; ++a)
                for (std::size_t b = 0; b < kh; ++b) {
                  const long ix = long(ox) * S - P + long(a);
                  const long iy = long(oy) * S - P + long(b);
                  if (ix < 0 || iy < 0 || ix >= W || iy >= H) continue;
                  for (std::size_t i = 0; i < ic; ++i) {
                    acc += l.weight[((o * kw + a) * kh + b) * ic + i] *
                           cur[(std::size_t(ix) * std::size_t(H) + std::size_t(iy)) * ic + i];
                  }
                }
              out[(ox * oh + oy) * oc + o] = acc;
            }
        cur = out;
        s = {ow, oh, oc};
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::MaxPool: {
        const std::size_t k = l.window, st = l.stride, C = s[2];
        const std::size_t ow = (s[0] - k) / st + 1, oh = (s[1] - k) / st + 1;
        std::vector<double> out(ow * oh * C);
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ch = 0; ch < C; ++ch) {
              double acc = l.kind == LayerKind::MaxPool ? -INFINITY : 0.0;
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) {
                  const double v = cur[((ox * st + a) * s[1] + oy * st + b) * C + ch];
                  acc = l.kind == LayerKind::MaxPool ? std::max(acc, v) : acc + v;
                }
              out[(ox * oh + oy) * C + ch] =
                  l.kind == LayerKind::MaxPool ? acc : acc / double(k * k);
            }
        cur = out;
        s = {ow, oh, C};
        break;
      }
      case LayerKind::Dense: {
        const std::size_t out_n = l.weight.shape()[0], in_n = l.weight.shape()[1];
        std::vector<double> out(out_n);
        for (std::size_t o = 0; o < out_n; ++o) {
          double acc = l.bias[o];
          for (std::size_t i = 0; i < in_n; ++i) acc += l.weight[o * in_n + i] * cur[i];
          out[o] = acc;
        }
        cur = out;
        s = {out_n};
        break;
      }
      case LayerKind::Flatten:
        s = {cur.size()};
        break;
      default:
        for (auto& v : cur) v = act(l.kind, v);
        break;
    }
  }
  return cur;
}

// Central differences of seed . R at x, every input coordinate.
inline Tensor finite_difference(const Graph& g, const Tensor& x, const std::vector<double>& seed,
                                double h = 1e-5) {
  Tensor out(x.shape());
  auto f = [&](const Tensor& in) {
    const auto r = naive_forward(g, in);
    double s = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) s += seed[k] * r[k];
    return s;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    out[i] = (f(p) - f(m)) / (2.0 * h);
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("modelspace_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
