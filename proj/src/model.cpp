#include "tiser/model.hpp"

#include <nlohmann/json.hpp>

#include "tiser/errors.hpp"

namespace tiser {

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.sample_rate_hz = 20;
  c.conv = {{16, 25, 2, Activation::kRelu}, {32, 25, 2, Activation::kRelu}};
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json::object();
  j["input_seconds"] = c.input_seconds;
  j["sample_rate_hz"] = c.sample_rate_hz;
  j["channels"] = c.channels;
  j["conv"] = nlohmann::json::array();
  for (const ConvSpec& s : c.conv) {
    j["conv"].push_back({{"filters", s.filters},
                         {"taps", s.taps},
                         {"stride", s.stride},
                         {"activation", activation_name(s.activation)}});
  }
  j["gcn"] = nlohmann::json::array();
  for (const GcnSpec& s : c.gcn) {
    j["gcn"].push_back({{"filters", s.filters}, {"activation", activation_name(s.activation)}});
  }
  j["dense_width"] = c.dense_width;
  j["dense_activation"] = activation_name(c.dense_activation);
  j["cross_filters"] = c.cross_filters;
  j["use_metadata"] = c.use_metadata;
  j["propagation"] = propagation_name(c.propagation);
  j["l2"] = c.l2;
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  // Missing keys keep their current (default) value so specs can be partial.
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("input_seconds", c.input_seconds);
    get("sample_rate_hz", c.sample_rate_hz);
    get("channels", c.channels);
    if (j.contains("conv")) {
      c.conv.clear();
      for (const auto& s : j.at("conv")) {
        c.conv.push_back({s.at("filters").get<std::size_t>(), s.at("taps").get<std::size_t>(),
                          s.at("stride").get<std::size_t>(),
                          activation_from_name(s.value("activation", "relu"))});
      }
    }
    if (j.contains("gcn")) {
      c.gcn.clear();
      for (const auto& s : j.at("gcn")) {
        c.gcn.push_back({s.at("filters").get<std::size_t>(),
                         activation_from_name(s.value("activation", "relu"))});
      }
    }
    get("dense_width", c.dense_width);
    if (j.contains("dense_activation")) {
      c.dense_activation = activation_from_name(j.at("dense_activation").get<std::string>());
    }
    get("cross_filters", c.cross_filters);
    get("use_metadata", c.use_metadata);
    if (j.contains("propagation")) {
      c.propagation = propagation_from_name(j.at("propagation").get<std::string>());
    }
    get("l2", c.l2);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::kTiserGcn ? "tiser" : "cnn";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "tiser" || name == "tiser_gcn") return ModelKind::kTiserGcn;
  if (name == "cnn" || name == "cnn_baseline") return ModelKind::kCnnBaseline;
  throw ConfigError("unknown model kind '" + name + "'");
}

namespace {

void validate(const ModelConfig& cfg, std::size_t n_nodes) {
  if (n_nodes < 1) throw ConfigError("model needs at least one node");
  if (cfg.samples() == 0 || cfg.channels == 0) throw ConfigError("empty input window");
  if (cfg.conv.empty()) throw ConfigError("at least one conv layer is required");
  if (cfg.dense_width == 0) throw ConfigError("dense_width must be positive");
  if (cfg.l2 < 0.0) throw ConfigError("l2 must be >= 0");
}

std::vector<Conv1DLayer> build_front_end(const ModelConfig& cfg, Rng& rng,
                                         std::size_t& length) {
  std::vector<Conv1DLayer> convs;
  std::size_t channels = cfg.channels;
  length = cfg.samples();
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const ConvSpec& s = cfg.conv[i];
    if (s.stride == 0 || s.taps == 0 || s.filters == 0) {
      throw ConfigError("conv" + std::to_string(i + 1) + ": dimensions must be positive");
    }
    if (length < s.taps) {
      throw ConfigError("conv" + std::to_string(i + 1) + ": input length " +
                        std::to_string(length) + " is shorter than kernel " +
                        std::to_string(s.taps));
    }
    convs.push_back(Conv1DLayer::create(s.taps, channels, s.filters, s.stride, s.activation, rng));
    length = convs.back().out_length(length);
    channels = s.filters;
  }
  return convs;
}

void build_heads(std::array<DenseLayer, kNumTargets>& heads, std::size_t width, std::size_t n,
                 Rng& rng) {
  for (auto& h : heads) h = DenseLayer::create(width, n, Activation::kLinear, rng);
}

}  // namespace

Model build_tiser_gcn(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed) {
  validate(cfg, n_nodes);
  if (cfg.gcn.empty()) throw ConfigError("TISER-GCN needs at least one GCN layer");
  Rng rng(seed);
  Model m;
  m.kind_ = ModelKind::kTiserGcn;
  m.cfg_ = cfg;
  m.n_nodes_ = n_nodes;
  std::size_t length = 0;
  m.convs_ = build_front_end(cfg, rng, length);
  m.feature_width_ = length * cfg.conv.back().filters + (cfg.use_metadata ? 2 : 0);
  std::size_t width = m.feature_width_;
  for (std::size_t i = 0; i < cfg.gcn.size(); ++i) {
    if (cfg.gcn[i].filters == 0) {
      throw ConfigError("gcn" + std::to_string(i + 1) + ": filters must be positive");
    }
    m.gcns_.push_back(GCNLayer::create(width, cfg.gcn[i].filters, cfg.gcn[i].activation, rng));
    width = cfg.gcn[i].filters;
  }
  m.trunk_ = DenseLayer::create(n_nodes * width, cfg.dense_width, cfg.dense_activation, rng);
  build_heads(m.heads_, cfg.dense_width, n_nodes, rng);
  return m;
}

Model build_cnn_baseline(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed) {
  validate(cfg, n_nodes);
  if (cfg.cross_filters == 0) throw ConfigError("cross_filters must be positive");
  Rng rng(seed);
  Model m;
  m.kind_ = ModelKind::kCnnBaseline;
  m.cfg_ = cfg;
  m.n_nodes_ = n_nodes;
  std::size_t length = 0;
  m.convs_ = build_front_end(cfg, rng, length);
  // The node axis is treated as the sequence axis with a kernel spanning all N
  // stations, so each of the `length` time steps yields one output row.
  m.cross_ = Conv1DLayer::create(n_nodes, cfg.conv.back().filters, cfg.cross_filters, 1,
                                 Activation::kRelu, rng);
  m.feature_width_ = length * cfg.cross_filters + (cfg.use_metadata ? 2 * n_nodes : 0);
  m.trunk_ = DenseLayer::create(m.feature_width_, cfg.dense_width, cfg.dense_activation, rng);
  build_heads(m.heads_, cfg.dense_width, n_nodes, rng);
  return m;
}

Model build_model(ModelKind kind, const ModelConfig& cfg, std::size_t n_nodes,
                  std::uint64_t seed) {
  return kind == ModelKind::kTiserGcn ? build_tiser_gcn(cfg, n_nodes, seed)
                                      : build_cnn_baseline(cfg, n_nodes, seed);
}

std::vector<ConstParamRef> Model::parameters() const {
  std::vector<ConstParamRef> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    out.push_back({p + ".kernels", &convs_[i].kernels, true});
    out.push_back({p + ".bias", &convs_[i].bias, false});
  }
  if (kind_ == ModelKind::kTiserGcn) {
    for (std::size_t i = 0; i < gcns_.size(); ++i) {
      out.push_back({"gcn" + std::to_string(i + 1) + ".weight", &gcns_[i].weight, true});
    }
  } else {
    out.push_back({"cross.kernels", &cross_.kernels, true});
    out.push_back({"cross.bias", &cross_.bias, false});
  }
  out.push_back({"dense.weight", &trunk_.weight, false});
  out.push_back({"dense.bias", &trunk_.bias, false});
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    const std::string p = std::string("head.") + kTargetNames[h];
    out.push_back({p + ".weight", &heads_[h].weight, false});
    out.push_back({p + ".bias", &heads_[h].bias, false});
  }
  return out;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (const ConstParamRef& p : std::as_const(*this).parameters()) {
    out.push_back({p.name, const_cast<Tensor*>(p.value), p.regularized});
  }
  return out;
}

Var Model::forward(Tape& tape, const Tensor& x, const Tensor& prop, const Tensor& z) const {
  const Shape expected{n_nodes_, cfg_.samples(), cfg_.channels};
  if (x.shape() != expected) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match expected " +
                     shape_str(expected));
  }
  if (cfg_.use_metadata && z.shape() != Shape{n_nodes_, 2}) {
    throw ShapeError("node metadata must be [N,2], got " + shape_str(z.shape()));
  }
  Var h = tape.constant(x);
  for (const Conv1DLayer& c : convs_) h = conv_apply(c, h);

  Var trunk_in;
  if (kind_ == ModelKind::kTiserGcn) {
    if (prop.shape() != Shape{n_nodes_, n_nodes_}) {
      throw ShapeError("propagation matrix must be [N,N], got " + shape_str(prop.shape()));
    }
    h = append_metadata(node_feature_reshape(h), z, cfg_.use_metadata);
    Var m = tape.constant(prop);
    for (const GCNLayer& g : gcns_) h = gcn_apply(g, m, h);
    trunk_in = flatten(h);
  } else {
    // [N, T', F] -> [T', N, F]: each time step becomes a length-N sequence.
    h = conv_apply(cross_, swap_leading_axes(h));
    trunk_in = flatten(h);
    if (cfg_.use_metadata) {
      trunk_in = concat_last(trunk_in, tape.constant(standardize_metadata(z).reshaped({2 * n_nodes_})));
    }
  }
  Var features = dense_apply(trunk_, trunk_in);
  std::vector<Var> rows;
  rows.reserve(kNumTargets);
  for (const DenseLayer& head : heads_) {
    rows.push_back(reshape(dense_apply(head, features), {1, n_nodes_}));
  }
  return concat_rows(rows);
}

void Model::zero_heads() {
  for (DenseLayer& h : heads_) {
    h.weight.fill(0.0);
    h.bias.fill(0.0);
  }
}

void Model::set_head_bias(const Tensor& mean) {
  if (mean.shape() != Shape{kNumTargets, n_nodes_}) {
    throw ShapeError("head bias must be [5,N], got " + shape_str(mean.shape()));
  }
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    for (std::size_t i = 0; i < n_nodes_; ++i) heads_[h].bias[i] = mean.at(h, i);
  }
}

std::size_t param_count(const Model& m) {
  std::size_t total = 0;
  for (const ConstParamRef& p : m.parameters()) total += p.value->size();
  return total;
}

Tensor predict(const Model& m, const PropagationMatrix& prop, const Tensor& x, const Tensor& z) {
  Tape tape(false);
  return m.forward(tape, x, prop.matrix, z).value();
}

}  // namespace tiser
