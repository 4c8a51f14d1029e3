#include "tiser/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "tiser/errors.hpp"

namespace tiser {

std::string build_version() { return std::string(TISER_VERSION) + "+" + TISER_GIT_VERSION; }

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = {{"input_seconds", p.input_seconds}, {"total_seconds", p.total_seconds},
       {"sample_rate_hz", p.sample_rate_hz}, {"channels", p.channels},
       {"vp_km_s", p.vp_km_s}, {"vs_km_s", p.vs_km_s},
       {"d0_km", p.d0_km}, {"p_ratio", p.p_ratio},
       {"noise", p.noise}, {"magnitude_min", p.magnitude_min},
       {"magnitude_max", p.magnitude_max}, {"depth_min_km", p.depth_min_km},
       {"depth_max_km", p.depth_max_km}, {"hull_margin", p.hull_margin}};
}

namespace {

template <typename T>
void get_opt(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

void from_json(const nlohmann::json& j, SynthParams& p) {
  get_opt(j, "input_seconds", p.input_seconds);
  get_opt(j, "total_seconds", p.total_seconds);
  get_opt(j, "sample_rate_hz", p.sample_rate_hz);
  get_opt(j, "channels", p.channels);
  get_opt(j, "vp_km_s", p.vp_km_s);
  get_opt(j, "vs_km_s", p.vs_km_s);
  get_opt(j, "d0_km", p.d0_km);
  get_opt(j, "p_ratio", p.p_ratio);
  get_opt(j, "noise", p.noise);
  get_opt(j, "magnitude_min", p.magnitude_min);
  get_opt(j, "magnitude_max", p.magnitude_max);
  get_opt(j, "depth_min_km", p.depth_min_km);
  get_opt(j, "depth_max_km", p.depth_max_km);
  get_opt(j, "hull_margin", p.hull_margin);
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"stations", s.stations}, {"events", s.events}, {"station_seed", s.station_seed},
       {"seed", s.seed}, {"params", s.params}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  get_opt(j, "stations", s.stations);
  get_opt(j, "events", s.events);
  get_opt(j, "station_seed", s.station_seed);
  get_opt(j, "seed", s.seed);
  if (j.contains("params")) from_json(j.at("params"), s.params);
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["command"] = command;
  j["dataset"] = dataset;
  j["synth"] = synth;
  j["model"] = model_kind_name(model);
  j["model_config"] = model_config;
  j["train"] = train;
  j["k"] = k;
  j["window_seconds"] = window_seconds;
  j["k_sweep"] = k_sweep;
  j["window_sweep"] = window_sweep;
  j["out"] = out;
  return j;
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("spec must be a JSON object");
  ExperimentSpec s;
  try {
    get_opt(j, "version", s.version);
    if (s.version != kSpecVersion) {
      throw VersionError("spec version " + std::to_string(s.version) + ", expected " +
                         std::to_string(kSpecVersion));
    }
    get_opt(j, "command", s.command);
    get_opt(j, "dataset", s.dataset);
    if (j.contains("synth")) tiser::from_json(j.at("synth"), s.synth);
    if (j.contains("model")) s.model = model_kind_from_name(j.at("model").get<std::string>());
    if (j.contains("model_config")) tiser::from_json(j.at("model_config"), s.model_config);
    if (j.contains("train")) tiser::from_json(j.at("train"), s.train);
    get_opt(j, "k", s.k);
    get_opt(j, "window_seconds", s.window_seconds);
    get_opt(j, "k_sweep", s.k_sweep);
    get_opt(j, "window_sweep", s.window_sweep);
    get_opt(j, "out", s.out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
  return s;
}

std::string ExperimentSpec::hash() const {
  nlohmann::json j = to_json();
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EventDataset resolve_dataset(const ExperimentSpec& spec, const std::string& data_root) {
  if (!spec.dataset.empty()) {
    std::filesystem::path p(spec.dataset);
    if (p.is_relative() && !data_root.empty()) p = std::filesystem::path(data_root) / p;
    return load_dataset(p.string());
  }
  const StationSet stations = synth_stations(spec.synth.stations, spec.synth.station_seed);
  return synth_dataset(stations, spec.synth.events, spec.synth.seed, spec.synth.params);
}

ModelConfig effective_model_config(const ExperimentSpec& spec, const EventDataset& ds) {
  ModelConfig c = spec.model_config;
  c.sample_rate_hz = ds.sample_rate_hz;
  c.channels = ds.channels;
  c.input_seconds = std::min(spec.window_seconds, ds.input_seconds());
  return c;
}

EventDataset windowed(const EventDataset& ds, std::size_t seconds) {
  if (seconds >= ds.input_seconds()) return ds;
  return ds.truncated(seconds);
}

GraphArtifacts make_graph(const StationSet& stations, double k, PropagationKind kind) {
  SensorGraph g = build_adjacency(stations, k);
  PropagationMatrix p = propagation(g, kind);
  GraphStats s = graph_stats(g);
  return {std::move(g), std::move(p), s};
}

ProtocolResult run_experiment(const ExperimentSpec& spec, const EventDataset& ds,
                              std::size_t jobs) {
  const EventDataset w = windowed(ds, spec.window_seconds);
  const ModelConfig mcfg = effective_model_config(spec, ds);
  const GraphArtifacts g = make_graph(ds.stations, spec.k, mcfg.propagation);
  return run_protocol(spec.model, mcfg, w, g.prop, spec.train, jobs);
}

BaselineScores run_baselines(const EventDataset& ds, const TrainConfig& tcfg) {
  const auto splits =
      split_protocol(ds.events, tcfg.seed, tcfg.folds, tcfg.repeats, tcfg.test_fraction);
  const Tensor feats = feature_matrix(ds);
  const Tensor targets = target_matrix(ds);
  const std::size_t m = targets.dim(1), n = ds.nodes;
  auto rows = [](const Tensor& t, const std::vector<std::size_t>& idx) {
    const std::size_t width = t.dim(1);
    Tensor out({idx.size(), width});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(t.ptr() + idx[r] * width, width, out.ptr() + r * width);
    }
    return out;
  };
  auto as_events = [&](const Tensor& mat) {
    std::vector<Tensor> out;
    for (std::size_t r = 0; r < mat.dim(0); ++r) {
      Tensor e({kNumTargets, n});
      std::copy_n(mat.ptr() + r * m, m, e.ptr());
      out.push_back(std::move(e));
    }
    return out;
  };
  std::vector<RunRecord> mean_runs, knn_runs;
  for (std::size_t r = 0; r < splits.size(); ++r) {
    const Split& s = splits[r];
    const auto train_idx = s.train_indices(s.folds.size());
    const Tensor ty = rows(targets, train_idx);
    const auto truth = as_events(rows(targets, s.test));
    const MeanPredictor mp = MeanPredictor::fit(ty);
    const auto grid = default_knn_grid();
    const KnnBaseline knn =
        KnnBaseline::fit(rows(feats, train_idx), ty, grid, tcfg.folds, s.seed);
    RunRecord a, b;
    a.repeat = b.repeat = r;
    a.test = evaluate_predictions(as_events(mp.predict(s.test.size())), truth);
    b.test = evaluate_predictions(as_events(knn.predict(rows(feats, s.test))), truth);
    mean_runs.push_back(a);
    knn_runs.push_back(b);
  }
  auto mean_metrics = [](const std::vector<RunRecord>& runs) {
    const RunReport rep = RunReport::aggregate("", 0, runs);
    Metrics m;
    for (std::size_t h = 0; h < kNumTargets; ++h) {
      m.per_im[h] = {rep.per_im[h].mae.mean, rep.per_im[h].mse.mean, rep.per_im[h].rmse.mean};
    }
    m.overall = {rep.overall.mae.mean, rep.overall.mse.mean, rep.overall.rmse.mean};
    return m;
  };
  return {mean_metrics(mean_runs), mean_metrics(knn_runs)};
}

std::vector<KRow> ablate_k(const ExperimentSpec& spec, const EventDataset& ds, std::size_t jobs) {
  const EventDataset w = windowed(ds, spec.window_seconds);
  const ModelConfig mcfg = effective_model_config(spec, ds);
  std::vector<KRow> rows;
  for (double k : spec.k_sweep) {
    const GraphArtifacts g = make_graph(ds.stations, k, mcfg.propagation);
    const ProtocolResult r = run_protocol(spec.model, mcfg, w, g.prop, spec.train, jobs);
    rows.push_back({k, g.stats.cutoff_km, g.stats.edge_count, g.stats.avg_degree_centrality,
                    r.report.overall.mse.mean});
  }
  return rows;
}

std::vector<WindowRow> ablate_window(const ExperimentSpec& spec, const EventDataset& ds,
                                     std::size_t jobs) {
  std::vector<WindowRow> rows;
  for (ModelKind kind : {ModelKind::kTiserGcn, ModelKind::kCnnBaseline}) {
    for (std::size_t sec : spec.window_sweep) {
      ExperimentSpec s = spec;
      s.model = kind;
      s.window_seconds = sec;
      const ProtocolResult r = run_experiment(s, ds, jobs);
      rows.push_back({model_kind_name(kind), sec, r.report.params, r.report.overall.mse.mean});
    }
  }
  return rows;
}

std::vector<MetaRow> ablate_meta(const ExperimentSpec& spec, const EventDataset& ds,
                                 std::size_t jobs) {
  std::vector<MetaRow> rows;
  const std::string hash = spec.hash();
  for (ModelKind kind : {ModelKind::kTiserGcn, ModelKind::kCnnBaseline}) {
    for (bool meta : {true, false}) {
      ExperimentSpec s = spec;
      s.model = kind;
      s.model_config.use_metadata = meta;
      const ProtocolResult r = run_experiment(s, ds, jobs);
      rows.push_back({model_kind_name(kind), meta, r.report.overall.mse.mean, spec.train.seed, hash});
    }
  }
  return rows;
}

}  // namespace tiser
