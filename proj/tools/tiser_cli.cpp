// tiser: experiment runner for the TISER-GCN pipeline.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>

#include "tiser/errors.hpp"
#include "tiser/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tiser;

namespace {

struct Common {
  std::string spec_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t jobs = 1;
  std::optional<std::string> dataset;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--spec", c.spec_path, "experiment spec JSON");
  cmd->add_option("--seed", c.seed, "training seed (overrides train.seed)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
}

std::string data_root() {
  const char* v = std::getenv("TISER_DATA_DIR");
  return v ? v : "";
}

ExperimentSpec load_spec(const Common& c, const std::string& command) {
  ExperimentSpec s;
  if (!c.spec_path.empty()) {
    std::ifstream in(c.spec_path);
    if (!in) throw IoError("cannot open spec '" + c.spec_path + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("spec '" + c.spec_path + "' is not valid JSON at offset " +
                        std::to_string(e.byte));
    }
    s = ExperimentSpec::from_json(j);
  }
  s.command = command;
  if (c.seed) s.train.seed = *c.seed;
  if (c.out) s.out = *c.out;
  if (c.dataset) s.dataset = *c.dataset;
  if (s.dataset.empty() && !data_root().empty() && fs::exists(fs::path(data_root()) / "manifest.json")) {
    s.dataset = data_root();
  }
  return s;
}

std::string provenance_line(const ExperimentSpec& s) {
  return "# spec_hash=" + s.hash() + " version=" + build_version() + "\n";
}

json stamp(const ExperimentSpec& s) { return {{"spec_hash", s.hash()}, {"version", build_version()}}; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

fs::path prepare_out(const ExperimentSpec& s) {
  fs::path out(s.out);
  fs::create_directories(out);
  json j = s.to_json();
  j["spec_hash"] = s.hash();
  j["binary_version"] = build_version();
  write_json(out / "spec.json", j);
  return out;
}

// Wall-clock numbers live in their own file so every other artifact stays
// bitwise reproducible.
class Timer {
 public:
  explicit Timer(fs::path dir) : dir_(std::move(dir)), t0_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    std::ofstream(dir_ / "timing.json") << json{{"wall_seconds", s}}.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::chrono::steady_clock::time_point t0_;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

void write_residuals(const fs::path& p, const ExperimentSpec& s, const EventDataset& ds,
                     const std::vector<std::size_t>& events, const std::vector<Tensor>& pred) {
  std::ostringstream o;
  o << provenance_line(s) << "event,station,im,y_true_log10,y_pred_log10\n";
  for (std::size_t k = 0; k < events.size(); ++k) {
    const Tensor y = ds.target(events[k]);
    for (std::size_t i = 0; i < ds.nodes; ++i) {
      for (std::size_t h = 0; h < kNumTargets; ++h) {
        o << events[k] << ',' << ds.stations[i].id << ',' << kTargetNames[h] << ','
          << fmt(y.at(h, i)) << ',' << fmt(pred[k].at(h, i)) << '\n';
      }
    }
  }
  write_text(p, o.str());
}

int cmd_synth(const ExperimentSpec& s) {
  const fs::path out = prepare_out(s);
  Timer t(out);
  const EventDataset ds = resolve_dataset(s, data_root());
  save_dataset((out / "dataset").string(), ds);
  json j = stamp(s);
  j["dataset"] = (out / "dataset").string();
  j["events"] = ds.events;
  j["nodes"] = ds.nodes;
  write_json(out / "synth.json", j);
  return 0;
}

int cmd_build_graph(const ExperimentSpec& s, const std::string& stations_csv) {
  const fs::path out = prepare_out(s);
  StationSet stations;
  if (!stations_csv.empty()) {
    stations = StationSet::load_csv(stations_csv);
  } else if (!s.dataset.empty()) {
    stations = resolve_dataset(s, data_root()).stations;
  } else {
    stations = synth_stations(s.synth.stations, s.synth.station_seed);
  }
  const GraphArtifacts g = make_graph(stations, s.k, s.model_config.propagation);
  json j = json::parse(g.graph.to_json());
  j["stats"] = {{"edge_count", g.stats.edge_count},
                {"avg_degree_centrality", g.stats.avg_degree_centrality},
                {"cutoff_km", g.stats.cutoff_km}};
  j["stations"] = json::array();
  for (const Station& st : stations.stations()) j["stations"].push_back(st.id);
  j.update(stamp(s));
  write_json(out / "graph.json", j);
  return 0;
}

int cmd_train(const ExperimentSpec& s, std::size_t jobs) {
  const fs::path out = prepare_out(s);
  Timer t(out);
  const EventDataset ds = resolve_dataset(s, data_root());
  const ProtocolResult r = run_experiment(s, ds, jobs);
  json rep = r.report.to_json();
  rep.update(stamp(s));
  write_json(out / "report.json", rep);
  std::ostringstream h;
  h << provenance_line(s);
  r.report.write_history_csv(h);
  write_text(out / "history.csv", h.str());
  save_checkpoint((out / "model.ckpt").string(), r.first_model);
  write_residuals(out / "residuals.csv", s, windowed(ds, s.window_seconds), r.first_test,
                  r.first_predictions);
  return 0;
}

int cmd_eval(const ExperimentSpec& s, const std::string& checkpoint, const std::string& which) {
  const fs::path out = prepare_out(s);
  const Model m = load_checkpoint(checkpoint);
  const EventDataset ds = windowed(resolve_dataset(s, data_root()), m.config().input_seconds);
  const GraphArtifacts g = make_graph(ds.stations, s.k, m.config().propagation);
  std::vector<std::size_t> idx;
  if (which == "test") {
    idx = split_protocol(ds.events, s.train.seed, s.train.folds, 1, s.train.test_fraction)[0].test;
  } else {
    for (std::size_t e = 0; e < ds.events; ++e) idx.push_back(e);
  }
  const Metrics met = evaluate(m, ds, idx, g.prop);
  json j = stamp(s);
  j["checkpoint"] = checkpoint;
  j["events"] = idx.size();
  j["metrics"] = json::object();
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    j["metrics"][kTargetNames[h]] = {{"mae", met.per_im[h].mae}, {"mse", met.per_im[h].mse},
                                     {"rmse", met.per_im[h].rmse}};
  }
  j["metrics"]["overall"] = {{"mae", met.overall.mae}, {"mse", met.overall.mse},
                             {"rmse", met.overall.rmse}};
  write_json(out / "metrics.json", j);
  return 0;
}

int cmd_ablate_k(const ExperimentSpec& s, std::size_t jobs) {
  const fs::path out = prepare_out(s);
  Timer t(out);
  const auto rows = ablate_k(s, resolve_dataset(s, data_root()), jobs);
  std::ostringstream o;
  o << provenance_line(s) << "k,cutoff_km,edges,avg_degree_centrality,mse\n";
  for (const KRow& r : rows) {
    o << fmt(r.k) << ',' << fmt(r.cutoff_km) << ',' << r.edges << ','
      << fmt(r.avg_degree_centrality) << ',' << fmt(r.mse) << '\n';
  }
  write_text(out / "ablate_k.csv", o.str());
  return 0;
}

int cmd_ablate_window(const ExperimentSpec& s, std::size_t jobs) {
  const fs::path out = prepare_out(s);
  Timer t(out);
  const auto rows = ablate_window(s, resolve_dataset(s, data_root()), jobs);
  std::ostringstream o;
  o << provenance_line(s) << "model,seconds,params,mse\n";
  for (const WindowRow& r : rows) {
    o << r.model << ',' << r.seconds << ',' << r.params << ',' << fmt(r.mse) << '\n';
  }
  write_text(out / "ablate_window.csv", o.str());
  return 0;
}

int cmd_ablate_meta(const ExperimentSpec& s, std::size_t jobs) {
  const fs::path out = prepare_out(s);
  Timer t(out);
  const auto rows = ablate_meta(s, resolve_dataset(s, data_root()), jobs);
  std::ostringstream o;
  o << provenance_line(s) << "model,metadata,mse,seed,spec_hash\n";
  for (const MetaRow& r : rows) {
    o << r.model << ',' << (r.metadata ? "on" : "off") << ',' << fmt(r.mse) << ',' << r.seed
      << ',' << r.spec_hash << '\n';
  }
  write_text(out / "ablate_meta.csv", o.str());
  return 0;
}

// ---------------------------------------------------------------- report

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + p.string() + "' is not valid JSON at offset " + std::to_string(e.byte));
  }
}

// Rows of a provenance-stamped CSV, header first, comment lines skipped.
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!rows.empty() && cells.size() != rows.front().size()) {
      throw FormatError("'" + p.string() + "': row with " + std::to_string(cells.size()) +
                        " cells under a " + std::to_string(rows.front().size()) + "-column header");
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw FormatError("'" + p.string() + "' has no header");
  return rows;
}

void markdown_table(std::ostream& md, const std::vector<std::vector<std::string>>& rows) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    md << '|';
    for (const auto& c : rows[r]) md << ' ' << c << " |";
    md << '\n';
    if (r == 0) {
      md << '|';
      for (std::size_t c = 0; c < rows[r].size(); ++c) md << "---|";
      md << '\n';
    }
  }
  md << '\n';
}

// Everything except the seed and output location must agree.
json comparable(json spec) {
  for (const char* k : {"out", "spec_hash", "binary_version", "command"}) spec.erase(k);
  spec["train"].erase("seed");
  return spec;
}

int cmd_report(const ExperimentSpec& s, const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw InputError("report needs at least one run directory");
  const fs::path out = prepare_out(s);
  std::ostringstream md;
  md << "# TISER-GCN report\n\n" << provenance_line(s) << "\n";

  std::vector<json> reports;
  std::optional<json> reference;
  std::string reference_dir;
  std::ostringstream residuals;
  residuals << provenance_line(s) << "event,station,im,y_true_log10,y_pred_log10\n";
  for (const std::string& d : dirs) {
    const fs::path dir(d);
    bool used = false;
    if (fs::exists(dir / "report.json")) {
      const json spec = comparable(read_json(dir / "spec.json"));
      if (!reference) {
        reference = spec;
        reference_dir = d;
      } else if (spec != *reference) {
        throw ConsistencyError("run '" + d + "' was produced by a spec incompatible with '" +
                               reference_dir + "' (only the seed may differ)");
      }
      reports.push_back(read_json(dir / "report.json"));
      const auto rows = read_csv(dir / "residuals.csv");
      for (std::size_t r = 1; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) residuals << (c ? "," : "") << rows[r][c];
        residuals << '\n';
      }
      used = true;
    }
    for (const char* name : {"ablate_k.csv", "ablate_window.csv", "ablate_meta.csv"}) {
      if (!fs::exists(dir / name)) continue;
      md << "## " << name << " (" << d << ")\n\n";
      markdown_table(md, read_csv(dir / name));
      used = true;
    }
    if (!used) throw InputError("'" + d + "' holds no completed run");
  }

  if (!reports.empty()) {
    std::ostringstream csv;
    csv << provenance_line(s) << "model,im,mae,mse,rmse,runs\n";
    std::vector<std::vector<std::string>> table = {{"IM", "MAE", "MSE", "RMSE"}};
    const std::string model = reports.front().at("model").get<std::string>();
    std::vector<std::string> ims(kTargetNames.begin(), kTargetNames.end());
    ims.push_back("overall");
    for (const std::string& im : ims) {
      double mae = 0.0, mse = 0.0;
      for (const json& r : reports) {
        mae += r.at("metrics").at(im).at("mae").at("mean").get<double>();
        mse += r.at("metrics").at(im).at("mse").at("mean").get<double>();
      }
      mae /= static_cast<double>(reports.size());
      mse /= static_cast<double>(reports.size());
      const double rmse = std::sqrt(mse);
      csv << model << ',' << im << ',' << fmt(mae) << ',' << fmt(mse) << ',' << fmt(rmse) << ','
          << reports.size() << '\n';
      table.push_back({im, fmt(mae), fmt(mse), fmt(rmse)});
    }
    write_text(out / "metrics.csv", csv.str());
    write_text(out / "residuals.csv", residuals.str());
    md << "## " << model << " test metrics (" << reports.size() << " run"
       << (reports.size() == 1 ? "" : "s") << ")\n\n";
    markdown_table(md, table);
  }
  write_text(out / "report.md", md.str());
  return 0;
}

int emit_error(const std::string& kind, const std::string& message, const std::string& command,
               int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"command", command}, {"exit_code", code}}
                   .dump()
            << std::endl;
  return code;
}

int exit_code_for(const std::string& kind) {
  if (kind == "io") return 3;
  if (kind == "config" || kind == "input") return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TISER-GCN experiment runner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", build_version());

  Common c;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* graph = app.add_subcommand("build-graph", "build the station graph");
  auto* train = app.add_subcommand("train", "run the training protocol");
  auto* eval = app.add_subcommand("eval", "score a checkpoint");
  auto* abk = app.add_subcommand("ablate-k", "sweep the edge threshold k");
  auto* abw = app.add_subcommand("ablate-window", "sweep the input window length");
  auto* abm = app.add_subcommand("ablate-meta", "node metadata on/off for both models");
  auto* report = app.add_subcommand("report", "consolidate run directories");
  for (auto* cmd : {synth, graph, train, eval, abk, abw, abm, report}) add_common(cmd, c);
  for (auto* cmd : {graph, train, eval, abk, abw, abm}) {
    cmd->add_option("--dataset", c.dataset, "dataset directory");
  }

  std::optional<std::size_t> n_stations, n_events;
  std::optional<std::uint64_t> data_seed;
  synth->add_option("--stations", n_stations, "number of stations");
  synth->add_option("--events", n_events, "number of events");
  synth->add_option("--data-seed", data_seed, "generator seed");

  std::optional<double> k;
  std::string stations_csv;
  graph->add_option("--k", k, "edge threshold in [0,1]");
  graph->add_option("--stations-csv", stations_csv, "station file (id,lat,lon)");
  for (auto* cmd : {train, eval, abm, abw}) cmd->add_option("--k", k, "edge threshold in [0,1]");

  std::optional<std::string> model;
  std::optional<std::size_t> window;
  bool no_meta = false;
  for (auto* cmd : {train, abk}) {
    cmd->add_option("--model", model, "tiser or cnn");
    cmd->add_option("--window", window, "input window in seconds");
    cmd->add_flag("--no-metadata", no_meta, "disable node metadata");
  }

  std::string checkpoint, which = "all";
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--events", which, "all or test")->check(CLI::IsMember({"all", "test"}));

  std::vector<double> ks;
  abk->add_option("--ks", ks, "k values");
  std::vector<std::string> dirs;
  report->add_option("runs", dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what(), "", 2);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    omp_set_num_threads(static_cast<int>(c.jobs));
    ExperimentSpec s = load_spec(c, command);
    if (n_stations) s.synth.stations = *n_stations;
    if (n_events) s.synth.events = *n_events;
    if (data_seed) s.synth.seed = *data_seed;
    if (k) s.k = *k;
    if (model) s.model = model_kind_from_name(*model);
    if (window) s.window_seconds = *window;
    if (no_meta) s.model_config.use_metadata = false;
    if (!ks.empty()) s.k_sweep = ks;

    if (command == "synth") return cmd_synth(s);
    if (command == "build-graph") return cmd_build_graph(s, stations_csv);
    if (command == "train") return cmd_train(s, c.jobs);
    if (command == "eval") return cmd_eval(s, checkpoint, which);
    if (command == "ablate-k") return cmd_ablate_k(s, c.jobs);
    if (command == "ablate-window") return cmd_ablate_window(s, c.jobs);
    if (command == "ablate-meta") return cmd_ablate_meta(s, c.jobs);
    return cmd_report(s, dirs);
  } catch (const Error& e) {
    return emit_error(e.kind(), e.what(), command, exit_code_for(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    return emit_error("io", e.what(), command, 3);
  } catch (const std::exception& e) {
    return emit_error("internal", e.what(), command, 1);
  }
}
