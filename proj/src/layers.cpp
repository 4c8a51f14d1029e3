#include "tiser/layers.hpp"

#include <algorithm>
#include <cmath>

#include "tiser/errors.hpp"

namespace tiser {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Conv1DLayer Conv1DLayer::create(std::size_t taps, std::size_t in_channels, std::size_t filters,
                                std::size_t stride, Activation activation, Rng& rng) {
  if (taps == 0 || in_channels == 0 || filters == 0 || stride == 0) {
    throw ConfigError("conv layer dimensions must be positive");
  }
  Conv1DLayer l;
  l.kernels =
      glorot_uniform({taps, in_channels, filters}, taps * in_channels, taps * filters, rng);
  l.bias = Tensor({filters}, 0.0);
  l.stride = stride;
  l.activation = activation;
  return l;
}

std::size_t Conv1DLayer::out_length(std::size_t length) const {
  if (length < taps()) return 0;
  return (length - taps()) / stride + 1;
}

GCNLayer GCNLayer::create(std::size_t in_features, std::size_t out_features,
                          Activation activation, Rng& rng) {
  GCNLayer l;
  l.weight = glorot_uniform({in_features, out_features}, in_features, out_features, rng);
  l.activation = activation;
  return l;
}

DenseLayer DenseLayer::create(std::size_t in_features, std::size_t out_features,
                              Activation activation, Rng& rng) {
  DenseLayer l;
  l.weight = glorot_uniform({in_features, out_features}, in_features, out_features, rng);
  l.bias = Tensor({out_features}, 0.0);
  l.activation = activation;
  return l;
}

Var conv_apply(const Conv1DLayer& layer, Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("conv_apply: input must be [N,T,C], got " + shape_str(s));
  if (s[1] < layer.taps()) {
    throw ShapeError("conv_apply: sequence length " + std::to_string(s[1]) +
                     " shorter than kernel " + std::to_string(layer.taps()));
  }
  Tape& t = x.tape();
  Var y = conv1d(x, t.parameter(layer.kernels), t.parameter(layer.bias), layer.stride);
  return activate(y, layer.activation);
}

Var node_feature_reshape(Var h) {
  const Shape& s = h.shape();
  if (s.size() != 3) throw ShapeError("node_feature_reshape: expected [N,T,F]");
  return reshape(h, {s[0], s[1] * s[2]});
}

Tensor standardize_metadata(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("metadata must be [N,d]");
  const std::size_t n = z.dim(0), d = z.dim(1);
  Tensor out(z.shape(), 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += z.at(i, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (z.at(i, c) - mean) * (z.at(i, c) - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) continue;
    for (std::size_t i = 0; i < n; ++i) out.at(i, c) = (z.at(i, c) - mean) / sd;
  }
  return out;
}

Var append_metadata(Var h, const Tensor& z, bool enabled) {
  if (!enabled) return h;
  if (h.shape().size() != 2 || z.rank() != 2 || z.dim(0) != h.shape()[0]) {
    throw ShapeError("append_metadata: metadata rows " + shape_str(z.shape()) +
                     " do not align with features " + shape_str(h.shape()));
  }
  return concat_last(h, h.tape().constant(standardize_metadata(z)));
}

Var gcn_apply(const GCNLayer& layer, Var prop, Var h) {
  const Shape& m = prop.shape();
  const Shape& hs = h.shape();
  if (m.size() != 2 || m[0] != m[1] || hs.size() != 2 || hs[0] != m[0]) {
    throw ShapeError("gcn_apply: propagation " + shape_str(m) + " incompatible with features " +
                     shape_str(hs));
  }
  if (hs[1] != layer.weight.dim(0)) {
    throw ShapeError("gcn_apply: feature width " + std::to_string(hs[1]) +
                     " does not match weight rows " + std::to_string(layer.weight.dim(0)));
  }
  // M (h W) is cheaper than (M h) W when F_in is wide.
  Var hw = matmul(h, h.tape().parameter(layer.weight));
  return activate(matmul(prop, hw), layer.activation);
}

Var dense_apply(const DenseLayer& layer, Var x) {
  Tape& t = x.tape();
  const bool vector_input = x.shape().size() == 1;
  Var in = vector_input ? reshape(x, {1, x.shape()[0]}) : x;
  Var y = add_bias(matmul(in, t.parameter(layer.weight)), t.parameter(layer.bias));
  y = activate(y, layer.activation);
  return vector_input ? reshape(y, {layer.bias.size()}) : y;
}

}  // namespace tiser
