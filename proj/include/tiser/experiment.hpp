#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiser/baselines.hpp"
#include "tiser/datakit.hpp"
#include "tiser/geo_graph.hpp"
#include "tiser/model.hpp"
#include "tiser/trainkit.hpp"

namespace tiser {

inline constexpr int kSpecVersion = 1;

// "0.1.0+<git describe>"
std::string build_version();

struct SynthSpec {
  std::size_t stations = 20;
  std::size_t events = 400;
  std::uint64_t station_seed = 1;
  std::uint64_t seed = 1;
  SynthParams params;

  bool operator==(const SynthSpec&) const = default;
};

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);
void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

// Everything needed to reproduce one CLI run. Serialised canonically (sorted
// keys), and the hash covers every field except `out`.
struct ExperimentSpec {
  int version = kSpecVersion;
  std::string command;
  // Dataset directory; empty means synthesise from `synth`.
  std::string dataset;
  SynthSpec synth;
  ModelKind model = ModelKind::kTiserGcn;
  ModelConfig model_config;
  TrainConfig train;
  double k = 0.3;
  std::size_t window_seconds = 10;
  std::vector<double> k_sweep = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::vector<std::size_t> window_sweep = {10, 9, 8, 7, 6, 5, 4};
  std::string out = "out";

  nlohmann::json to_json() const;
  static ExperimentSpec from_json(const nlohmann::json& j);
  // FNV-1a 64 of the canonical JSON without `out`, as 16 hex digits.
  std::string hash() const;
};

// Loads spec.dataset (relative paths resolve against `data_root` when given)
// or synthesises the dataset described by spec.synth.
EventDataset resolve_dataset(const ExperimentSpec& spec, const std::string& data_root = "");

// Model config aligned with the dataset: sample rate and channels from the
// data, input length from window_seconds.
ModelConfig effective_model_config(const ExperimentSpec& spec, const EventDataset& ds);

// Dataset cut to spec.window_seconds when that is shorter than the recording.
EventDataset windowed(const EventDataset& ds, std::size_t seconds);

struct GraphArtifacts {
  SensorGraph graph;
  PropagationMatrix prop;
  GraphStats stats;
};
GraphArtifacts make_graph(const StationSet& stations, double k, PropagationKind kind);

ProtocolResult run_experiment(const ExperimentSpec& spec, const EventDataset& ds,
                              std::size_t jobs = 1);

struct BaselineScores {
  Metrics mean_predictor;
  Metrics knn;
};
// Both baselines fitted on the non-test events of every repeat and scored on
// that repeat's test set, averaged over repeats.
BaselineScores run_baselines(const EventDataset& ds, const TrainConfig& tcfg);

struct KRow {
  double k;
  double cutoff_km;
  std::size_t edges;
  double avg_degree_centrality;
  double mse;
};
std::vector<KRow> ablate_k(const ExperimentSpec& spec, const EventDataset& ds, std::size_t jobs = 1);

struct WindowRow {
  std::string model;
  std::size_t seconds;
  std::size_t params;
  double mse;
};
// Both architectures at every window length in spec.window_sweep.
std::vector<WindowRow> ablate_window(const ExperimentSpec& spec, const EventDataset& ds,
                                     std::size_t jobs = 1);

struct MetaRow {
  std::string model;
  bool metadata;
  double mse;
  std::uint64_t seed;
  std::string spec_hash;
};
// {tiser, cnn} x {on, off}, otherwise identical runs.
std::vector<MetaRow> ablate_meta(const ExperimentSpec& spec, const EventDataset& ds,
                                 std::size_t jobs = 1);

}  // namespace tiser
