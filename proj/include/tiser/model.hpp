#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiser/autodiff.hpp"
#include "tiser/geo_graph.hpp"
#include "tiser/layers.hpp"
#include "tiser/targets.hpp"

namespace tiser {

struct ConvSpec {
  std::size_t filters = 32;
  std::size_t taps = 125;
  std::size_t stride = 2;
  Activation activation = Activation::kRelu;

  bool operator==(const ConvSpec&) const = default;
};

struct GcnSpec {
  std::size_t filters = 64;
  Activation activation = Activation::kRelu;

  bool operator==(const GcnSpec&) const = default;
};

struct ModelConfig {
  std::size_t input_seconds = 10;
  std::size_t sample_rate_hz = 100;
  std::size_t channels = 3;
  std::vector<ConvSpec> conv = {{32, 125, 2, Activation::kRelu}, {64, 125, 2, Activation::kRelu}};
  std::vector<GcnSpec> gcn = {{64, Activation::kRelu}, {64, Activation::kTanh}};
  std::size_t dense_width = 128;
  Activation dense_activation = Activation::kRelu;
  // CNN baseline only: filters of the conv spanning the node axis.
  std::size_t cross_filters = 64;
  bool use_metadata = true;
  PropagationKind propagation = PropagationKind::kKipfRenormalized;
  double l2 = 1e-4;

  std::size_t samples() const { return input_seconds * sample_rate_hz; }

  // Reduced front-end for CPU-scale experiments: 20 Hz input, kernel 25,
  // 16/32 filters. Same layer structure as the default.
  static ModelConfig desk();

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class ModelKind { kTiserGcn, kCnnBaseline };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ParamRef {
  std::string name;
  Tensor* value;
  bool regularized;
};

struct ConstParamRef {
  std::string name;
  const Tensor* value;
  bool regularized;
};

class Model {
 public:
  ModelKind kind() const noexcept { return kind_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t n_nodes() const noexcept { return n_nodes_; }

  // Registry order is fixed per architecture and used by checkpoints and the
  // optimizer state.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;

  // Records the forward pass on `tape`. x [N,T,C], prop [N,N] (ignored by the
  // CNN baseline), z raw coordinates [N,2]. Returns [5,N].
  Var forward(Tape& tape, const Tensor& x, const Tensor& prop, const Tensor& z) const;

  // Width of the node features entering the first GCN layer (TISER) or the
  // dense trunk input (CNN).
  std::size_t feature_width() const noexcept { return feature_width_; }

  // Sets every head weight and bias to zero.
  void zero_heads();
  // Sets head biases so that the untrained model outputs `mean` [5,N] for a
  // zero trunk activation.
  void set_head_bias(const Tensor& mean);

 private:
  friend Model build_tiser_gcn(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed);
  friend Model build_cnn_baseline(const ModelConfig& cfg, std::size_t n_nodes,
                                  std::uint64_t seed);

  ModelKind kind_ = ModelKind::kTiserGcn;
  ModelConfig cfg_;
  std::size_t n_nodes_ = 0;
  std::size_t feature_width_ = 0;
  std::vector<Conv1DLayer> convs_;
  std::vector<GCNLayer> gcns_;
  Conv1DLayer cross_;  // CNN baseline only
  DenseLayer trunk_;
  std::array<DenseLayer, kNumTargets> heads_;
};

Model build_tiser_gcn(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed);
Model build_cnn_baseline(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed);
Model build_model(ModelKind kind, const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed);

std::size_t param_count(const Model& m);

// Forward pass without gradient tracking. Returns [5,N] log10 IM predictions.
Tensor predict(const Model& m, const PropagationMatrix& prop, const Tensor& x, const Tensor& z);

// Binary checkpoint: "TSRG", u32 version, u64 length + canonical JSON
// {kind, n_nodes, config}, u64 parameter count, then per parameter
// u32 name length + name, u32 rank, u64 dims, f64 little-endian values.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(std::ostream& out, const Model& m);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace tiser
