#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiser/datakit.hpp"
#include "tiser/geo_graph.hpp"
#include "tiser/model.hpp"

namespace tiser {

struct RmsPropConfig {
  double lr = 0.001;
  double rho = 0.9;
  double eps = 1e-7;

  bool operator==(const RmsPropConfig&) const = default;
};

struct TrainConfig {
  std::size_t batch_size = 20;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  bool early_stopping = true;
  RmsPropConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::size_t repeats = 5;
  // Folds actually trained per repeat; 0 means all of them.
  std::size_t folds_used = 0;
  double test_fraction = 0.2;
  // Stop as soon as the full training-set MSE falls below this (0 = off).
  double stop_at_train_mse = 0.0;
  // Start the head biases at the training target means.
  bool init_head_bias = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Second-moment accumulators, one per parameter tensor.
struct RmsPropState {
  std::vector<Tensor> v;
};

// v <- rho v + (1 - rho) g^2; theta <- theta - lr g / (sqrt(v) + eps).
// Throws DivergenceError naming the tensor when a gradient is not finite.
void rmsprop_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  RmsPropState& state, const RmsPropConfig& cfg,
                  std::span<const std::string> names = {});

struct Split {
  std::uint64_t seed = 0;
  std::vector<std::size_t> test;
  std::vector<std::vector<std::size_t>> folds;

  // Union of every fold except `fold`.
  std::vector<std::size_t> train_indices(std::size_t fold) const;
};

// `repeats` independent shuffles, each holding out round(E * test_fraction)
// events for testing and cutting the rest into `folds` disjoint folds.
std::vector<Split> split_protocol(std::size_t events, std::uint64_t seed, std::size_t folds = 5,
                                  std::size_t repeats = 5, double test_fraction = 0.2);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-event data MSE seen during the epoch
  double val_loss = 0.0;    // NaN without a validation set
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  bool stopped_early = false;
  // Full training-set MSE at the end, only filled by the stop_at_train_mse rule.
  double final_train_mse = 0.0;
};

// Data term: MSE over the [5,N] cells of one event. Adds the L2 penalty on
// regularised parameters when `with_l2`.
Var event_loss(Tape& tape, const Model& model, const Tensor& x, const Tensor& y,
               const Tensor& prop, const Tensor& z, bool with_l2 = true);

TrainHistory train(Model& model, const EventDataset& ds, std::span<const std::size_t> train_idx,
                   std::span<const std::size_t> val_idx, const PropagationMatrix& prop,
                   const TrainConfig& cfg);

struct ImMetrics {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

struct Metrics {
  std::array<ImMetrics, kNumTargets> per_im;
  ImMetrics overall;
};

// pred and truth are lists of [5,N] tensors.
Metrics evaluate_predictions(std::span<const Tensor> pred, std::span<const Tensor> truth);
std::vector<Tensor> predict_events(const Model& model, const EventDataset& ds,
                                   std::span<const std::size_t> idx, const PropagationMatrix& prop);
Metrics evaluate(const Model& model, const EventDataset& ds, std::span<const std::size_t> idx,
                 const PropagationMatrix& prop);

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

struct CellStats {
  Stat mae, mse, rmse;
};

struct RunRecord {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  Metrics test;
  TrainHistory history;
};

// Aggregate over folds x repeats. The RMSE mean is sqrt of the MSE mean so
// RMSE^2 = MSE holds in every cell.
struct RunReport {
  std::string model;
  std::size_t params = 0;
  std::array<CellStats, kNumTargets> per_im;
  CellStats overall;
  std::vector<RunRecord> runs;

  static RunReport aggregate(std::string model, std::size_t params, std::vector<RunRecord> runs);
  nlohmann::json to_json() const;
  void write_history_csv(std::ostream& out) const;
};

struct ProtocolResult {
  RunReport report;
  // The first run's model and its test-set predictions, kept for checkpoints
  // and residual plots.
  Model first_model;
  std::vector<std::size_t> first_test;
  std::vector<Tensor> first_predictions;
};

// Full protocol: for every repeat and fold a fresh model (seed derived from
// the run) trained with the fold as validation set, scored on the test set.
// Runs execute on up to `jobs` threads; results do not depend on `jobs`.
ProtocolResult run_protocol(ModelKind kind, const ModelConfig& mcfg, const EventDataset& ds,
                            const PropagationMatrix& prop, const TrainConfig& tcfg,
                            std::size_t jobs = 1);

}  // namespace tiser
