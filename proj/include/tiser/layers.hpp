#pragma once

#include <cstddef>
#include <random>

#include "tiser/autodiff.hpp"
#include "tiser/tensor.hpp"

namespace tiser {

using Rng = std::mt19937_64;

// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// 1D convolution applied with the same weights to every node.
struct Conv1DLayer {
  Tensor kernels;  // [K, C_in, F]
  Tensor bias;     // [F]
  std::size_t stride = 1;
  Activation activation = Activation::kRelu;

  static Conv1DLayer create(std::size_t taps, std::size_t in_channels, std::size_t filters,
                            std::size_t stride, Activation activation, Rng& rng);

  std::size_t taps() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t filters() const { return kernels.dim(2); }
  // Output length for an input of `length` samples; 0 when the kernel does not fit.
  std::size_t out_length(std::size_t length) const;
};

// No bias term.
struct GCNLayer {
  Tensor weight;  // [F_in, F_out]
  Activation activation = Activation::kRelu;

  static GCNLayer create(std::size_t in_features, std::size_t out_features, Activation activation,
                         Rng& rng);
};

struct DenseLayer {
  Tensor weight;  // [F_in, F_out]
  Tensor bias;    // [F_out]
  Activation activation = Activation::kLinear;

  static DenseLayer create(std::size_t in_features, std::size_t out_features,
                           Activation activation, Rng& rng);
};

// x: [N, T, C] -> [N, T', F]
Var conv_apply(const Conv1DLayer& layer, Var x);

// [N, T', F] -> [N, T'*F], row-major per node.
Var node_feature_reshape(Var h);

// Column-wise z-score over the station set; zero-variance columns map to 0.
Tensor standardize_metadata(const Tensor& z);

// [N, Fh] ++ standardized z [N, 2] -> [N, Fh + 2]. Returns h unchanged when
// disabled.
Var append_metadata(Var h, const Tensor& z, bool enabled = true);

// activation(M . h . W)
Var gcn_apply(const GCNLayer& layer, Var prop, Var h);

// activation(x W + b) for x [F_in] or [rows, F_in]
Var dense_apply(const DenseLayer& layer, Var x);

}  // namespace tiser
