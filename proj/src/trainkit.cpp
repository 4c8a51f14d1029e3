#include "tiser/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>
#include <omp.h>

#include "tiser/errors.hpp"
#include "tiser/rng.hpp"

namespace tiser {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (folds_used > folds) throw ConfigError("folds_used exceeds folds");
  if (optimizer.lr < 0.0 || !(optimizer.rho >= 0.0 && optimizer.rho < 1.0) || !(optimizer.eps > 0.0)) {
    throw ConfigError("optimizer needs lr >= 0, 0 <= rho < 1, eps > 0");
  }
  if (stop_at_train_mse < 0.0) throw ConfigError("stop_at_train_mse must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"early_stopping", c.early_stopping},
       {"optimizer", {{"name", "rmsprop"}, {"lr", c.optimizer.lr}, {"rho", c.optimizer.rho},
                      {"eps", c.optimizer.eps}}},
       {"seed", c.seed},
       {"folds", c.folds},
       {"repeats", c.repeats},
       {"folds_used", c.folds_used},
       {"test_fraction", c.test_fraction},
       {"stop_at_train_mse", c.stop_at_train_mse},
       {"init_head_bias", c.init_head_bias}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  auto get = [&](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) field = o.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get(j, "batch_size", c.batch_size);
    get(j, "max_epochs", c.max_epochs);
    get(j, "patience", c.patience);
    get(j, "early_stopping", c.early_stopping);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      if (o.value("name", "rmsprop") != "rmsprop") throw ConfigError("only rmsprop is supported");
      get(o, "lr", c.optimizer.lr);
      get(o, "rho", c.optimizer.rho);
      get(o, "eps", c.optimizer.eps);
    }
    get(j, "seed", c.seed);
    get(j, "folds", c.folds);
    get(j, "repeats", c.repeats);
    get(j, "folds_used", c.folds_used);
    get(j, "test_fraction", c.test_fraction);
    get(j, "stop_at_train_mse", c.stop_at_train_mse);
    get(j, "init_head_bias", c.init_head_bias);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void rmsprop_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  RmsPropState& state, const RmsPropConfig& cfg,
                  std::span<const std::string> names) {
  if (params.size() != grads.size()) throw ShapeError("parameter and gradient counts differ");
  if (state.v.empty()) {
    for (Tensor* p : params) state.v.emplace_back(p->shape());
  }
  if (state.v.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& theta = *params[t];
    const Tensor& g = grads[t];
    Tensor& v = state.v[t];
    if (g.shape() != theta.shape() || v.shape() != theta.shape()) {
      throw ShapeError("gradient " + shape_str(g.shape()) + " does not match parameter " +
                       shape_str(theta.shape()));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(g[i])) {
        const std::string who = t < names.size() ? names[t] : "#" + std::to_string(t);
        throw DivergenceError("non-finite gradient in parameter " + who + " at element " +
                              std::to_string(i) + " (value " + std::to_string(g[i]) + ")");
      }
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * g[i] * g[i];
      theta[i] -= cfg.lr * g[i] / (std::sqrt(v[i]) + cfg.eps);
    }
  }
}

std::vector<std::size_t> Split::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

std::vector<Split> split_protocol(std::size_t events, std::uint64_t seed, std::size_t folds,
                                  std::size_t repeats, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InputError("test_fraction must lie in (0, 1)");
  }
  if (folds < 2) throw InputError("need at least 2 folds");
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(events)));
  if (events < 10 || n_test < 1 || events - n_test < folds) {
    throw InputError(std::to_string(events) + " events are too few for a " +
                     std::to_string(folds) + "-fold protocol");
  }
  std::vector<Split> out;
  for (std::size_t r = 0; r < repeats; ++r) {
    Split s;
    s.seed = mix_seed(seed, r);
    std::vector<std::size_t> idx(events);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(s.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    const std::size_t rest = events - n_test;
    std::size_t pos = n_test;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t len = rest / folds + (f < rest % folds ? 1 : 0);
      s.folds.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                           idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
    out.push_back(std::move(s));
  }
  return out;
}

Var event_loss(Tape& tape, const Model& model, const Tensor& x, const Tensor& y,
               const Tensor& prop, const Tensor& z, bool with_l2) {
  Var pred = model.forward(tape, x, prop, z);
  Var loss = mse_loss(pred, tape.constant(y));
  const double l2 = model.config().l2;
  if (!with_l2 || l2 == 0.0) return loss;
  std::vector<Var> reg;
  for (const ConstParamRef& p : model.parameters()) {
    if (p.regularized) reg.push_back(tape.parameter(*p.value));
  }
  return add(loss, l2_penalty(tape, reg, l2));
}

namespace {

struct EventGrad {
  double mse = 0.0;
  std::vector<Tensor> grads;
};

EventGrad event_gradient(const Model& model, const std::vector<ParamRef>& params,
                         const Tensor& x, const Tensor& y, const Tensor& prop, const Tensor& z) {
  Tape tape;
  Var pred = model.forward(tape, x, prop, z);
  Var data = mse_loss(pred, tape.constant(y));
  Var loss = data;
  const double l2 = model.config().l2;
  if (l2 != 0.0) {
    std::vector<Var> reg;
    for (const ParamRef& p : params) {
      if (p.regularized) reg.push_back(tape.parameter(*p.value));
    }
    loss = add(data, l2_penalty(tape, reg, l2));
  }
  tape.backward(loss);
  EventGrad out;
  out.mse = data.value()[0];
  out.grads.reserve(params.size());
  for (const ParamRef& p : params) out.grads.push_back(tape.grad_of(*p.value));
  return out;
}

double mean_mse(const Model& model, const EventDataset& ds, std::span<const std::size_t> idx,
                const PropagationMatrix& prop, const Tensor& z) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor p = predict(model, prop, ds.input(idx[i]), z);
    const Tensor t = ds.target(idx[i]);
    double s = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) s += (p[c] - t[c]) * (p[c] - t[c]);
    per[i] = s / static_cast<double>(p.size());
  }
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

std::vector<Tensor> snapshot(const std::vector<ParamRef>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const ParamRef& p : params) out.push_back(*p.value);
  return out;
}

}  // namespace

TrainHistory train(Model& model, const EventDataset& ds, std::span<const std::size_t> train_idx,
                   std::span<const std::size_t> val_idx, const PropagationMatrix& prop,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (train_idx.empty()) throw InputError("training set is empty");
  if (ds.nodes != model.n_nodes() || ds.samples != model.config().samples() ||
      ds.channels != model.config().channels) {
    throw ShapeError("dataset [N,T,C] = [" + std::to_string(ds.nodes) + "," +
                     std::to_string(ds.samples) + "," + std::to_string(ds.channels) +
                     "] does not match the model");
  }
  const Tensor z = ds.stations.coordinates();
  auto params = model.parameters();
  std::vector<Tensor*> ptrs;
  std::vector<std::string> names;
  for (const ParamRef& p : params) {
    ptrs.push_back(p.value);
    names.push_back(p.name);
  }

  if (cfg.init_head_bias) {
    Tensor mean({kNumTargets, ds.nodes});
    for (std::size_t e : train_idx) {
      const Tensor y = ds.target(e);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += y[i];
    }
    for (double& v : mean.data()) v /= static_cast<double>(train_idx.size());
    model.set_head_bias(mean);
  }

  RmsPropState state;
  TrainHistory hist;
  hist.best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = snapshot(params);
  std::size_t wait = 0;
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  const bool parallel = omp_get_max_threads() > 1 && !omp_in_parallel();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::copy(train_idx.begin(), train_idx.end(), order.begin());
    std::mt19937_64 rng(mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_mse = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t b = end - start;
      std::vector<Tensor> acc;
      double batch_mse = 0.0;
      auto absorb = [&](EventGrad&& g) {
        batch_mse += g.mse;
        if (acc.empty()) {
          acc.reserve(g.grads.size());
          for (const Tensor& t : g.grads) acc.emplace_back(t.shape());
        }
        for (std::size_t t = 0; t < acc.size(); ++t) {
          double* a = acc[t].ptr();
          const double* s = g.grads[t].ptr();
          for (std::size_t i = 0; i < acc[t].size(); ++i) a[i] += s[i];
        }
      };
      // Gradients are always summed in batch order, so the result does not
      // depend on the thread count.
      if (parallel && b > 1) {
        std::vector<EventGrad> per(b);
#pragma omp parallel for schedule(dynamic)
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t e = order[start + i];
          per[i] = event_gradient(model, params, ds.input(e), ds.target(e), prop.matrix, z);
        }
        for (auto& g : per) absorb(std::move(g));
      } else {
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t e = order[start + i];
          absorb(event_gradient(model, params, ds.input(e), ds.target(e), prop.matrix, z));
        }
      }
      if (!std::isfinite(batch_mse)) {
        throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch) +
                              " at batch starting " + std::to_string(start));
      }
      const double inv = 1.0 / static_cast<double>(b);
      for (Tensor& t : acc) {
        for (double& v : t.data()) v *= inv;
      }
      rmsprop_step(ptrs, acc, state, cfg.optimizer, names);
      epoch_mse += batch_mse;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_mse / static_cast<double>(order.size());
    rec.val_loss = mean_mse(model, ds, val_idx, prop, z);
    hist.epochs.push_back(rec);

    if (!val_idx.empty()) {
      if (!std::isfinite(rec.val_loss)) {
        throw DivergenceError("validation loss became non-finite in epoch " + std::to_string(epoch));
      }
      if (rec.val_loss < hist.best_val) {
        hist.best_val = rec.val_loss;
        hist.best_epoch = epoch;
        best = snapshot(params);
        wait = 0;
      } else if (cfg.early_stopping && ++wait >= cfg.patience) {
        hist.stopped_early = true;
        break;
      }
    } else {
      hist.best_epoch = epoch;
    }
    if (cfg.stop_at_train_mse > 0.0) {
      hist.final_train_mse = mean_mse(model, ds, train_idx, prop, z);
      if (hist.final_train_mse < cfg.stop_at_train_mse) break;
    }
  }
  if (!val_idx.empty()) {
    for (std::size_t t = 0; t < params.size(); ++t) *params[t].value = best[t];
  } else {
    hist.best_val = std::numeric_limits<double>::quiet_NaN();
  }
  return hist;
}

Metrics evaluate_predictions(std::span<const Tensor> pred, std::span<const Tensor> truth) {
  if (pred.size() != truth.size()) throw ShapeError("prediction and truth counts differ");
  if (pred.empty()) throw InputError("cannot evaluate an empty set");
  Metrics m;
  std::array<double, kNumTargets> abs_sum{}, sq_sum{};
  std::size_t cells = 0;
  for (std::size_t e = 0; e < pred.size(); ++e) {
    if (pred[e].shape() != truth[e].shape() || pred[e].rank() != 2 ||
        pred[e].dim(0) != kNumTargets) {
      throw ShapeError("predictions must be [5,N] and match the targets");
    }
    const std::size_t n = pred[e].dim(1);
    for (std::size_t h = 0; h < kNumTargets; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[e].at(h, i) - truth[e].at(h, i);
        abs_sum[h] += std::abs(d);
        sq_sum[h] += d * d;
      }
    }
    cells += n;
  }
  double abs_all = 0.0, sq_all = 0.0;
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    m.per_im[h].mae = abs_sum[h] / static_cast<double>(cells);
    m.per_im[h].mse = sq_sum[h] / static_cast<double>(cells);
    m.per_im[h].rmse = std::sqrt(m.per_im[h].mse);
    abs_all += abs_sum[h];
    sq_all += sq_sum[h];
  }
  m.overall.mae = abs_all / static_cast<double>(cells * kNumTargets);
  m.overall.mse = sq_all / static_cast<double>(cells * kNumTargets);
  m.overall.rmse = std::sqrt(m.overall.mse);
  return m;
}

std::vector<Tensor> predict_events(const Model& model, const EventDataset& ds,
                                   std::span<const std::size_t> idx,
                                   const PropagationMatrix& prop) {
  const Tensor z = ds.stations.coordinates();
  std::vector<Tensor> out(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = predict(model, prop, ds.input(idx[i]), z);
  return out;
}

Metrics evaluate(const Model& model, const EventDataset& ds, std::span<const std::size_t> idx,
                 const PropagationMatrix& prop) {
  const auto pred = predict_events(model, ds, idx, prop);
  std::vector<Tensor> truth;
  truth.reserve(idx.size());
  for (std::size_t e : idx) truth.push_back(ds.target(e));
  return evaluate_predictions(pred, truth);
}

namespace {

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

template <typename Get>
CellStats cell_of(const std::vector<RunRecord>& runs, Get get) {
  std::vector<double> mae, mse, rmse;
  for (const RunRecord& r : runs) {
    const ImMetrics& m = get(r.test);
    mae.push_back(m.mae);
    mse.push_back(m.mse);
    rmse.push_back(m.rmse);
  }
  CellStats c;
  c.mae = stat_of(mae);
  c.mse = stat_of(mse);
  c.rmse = stat_of(rmse);
  c.rmse.mean = std::sqrt(c.mse.mean);
  return c;
}

nlohmann::json cell_json(const CellStats& c) {
  return {{"mae", {{"mean", c.mae.mean}, {"std", c.mae.std}}},
          {"mse", {{"mean", c.mse.mean}, {"std", c.mse.std}}},
          {"rmse", {{"mean", c.rmse.mean}, {"std", c.rmse.std}}}};
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    j[kTargetNames[h]] = {{"mae", m.per_im[h].mae}, {"mse", m.per_im[h].mse}, {"rmse", m.per_im[h].rmse}};
  }
  j["overall"] = {{"mae", m.overall.mae}, {"mse", m.overall.mse}, {"rmse", m.overall.rmse}};
  return j;
}

}  // namespace

RunReport RunReport::aggregate(std::string model, std::size_t params, std::vector<RunRecord> runs) {
  if (runs.empty()) throw InputError("cannot aggregate zero runs");
  RunReport r;
  r.model = std::move(model);
  r.params = params;
  for (std::size_t h = 0; h < kNumTargets; ++h) {
    r.per_im[h] = cell_of(runs, [h](const Metrics& m) -> const ImMetrics& { return m.per_im[h]; });
  }
  r.overall = cell_of(runs, [](const Metrics& m) -> const ImMetrics& { return m.overall; });
  r.runs = std::move(runs);
  return r;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["params"] = params;
  j["metrics"] = nlohmann::json::object();
  for (std::size_t h = 0; h < kNumTargets; ++h) j["metrics"][kTargetNames[h]] = cell_json(per_im[h]);
  j["metrics"]["overall"] = cell_json(overall);
  j["runs"] = nlohmann::json::array();
  for (const RunRecord& r : runs) {
    j["runs"].push_back({{"repeat", r.repeat},
                         {"fold", r.fold},
                         {"best_epoch", r.history.best_epoch},
                         {"epochs", r.history.epochs.size()},
                         {"stopped_early", r.history.stopped_early},
                         {"test", metrics_json(r.test)}});
  }
  return j;
}

void RunReport::write_history_csv(std::ostream& out) const {
  out << "repeat,fold,epoch,train_loss,val_loss\n";
  out.precision(17);
  for (const RunRecord& r : runs) {
    for (const EpochRecord& e : r.history.epochs) {
      out << r.repeat << ',' << r.fold << ',' << e.epoch << ',' << e.train_loss << ','
          << e.val_loss << '\n';
    }
  }
}

ProtocolResult run_protocol(ModelKind kind, const ModelConfig& mcfg, const EventDataset& ds,
                            const PropagationMatrix& prop, const TrainConfig& tcfg,
                            std::size_t jobs) {
  tcfg.validate();
  const auto splits =
      split_protocol(ds.events, tcfg.seed, tcfg.folds, tcfg.repeats, tcfg.test_fraction);
  const std::size_t per_repeat = tcfg.folds_used ? tcfg.folds_used : tcfg.folds;
  const std::size_t total = splits.size() * per_repeat;
  std::vector<RunRecord> runs(total);
  Model first;
  const int threads = static_cast<int>(std::max<std::size_t>(1, jobs));

#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t r = k / per_repeat, f = k % per_repeat;
    const Split& s = splits[r];
    TrainConfig run_cfg = tcfg;
    run_cfg.seed = mix_seed(s.seed, f);
    Model m = build_model(kind, mcfg, ds.nodes, run_cfg.seed);
    const auto tr = s.train_indices(f);
    RunRecord rec;
    rec.repeat = r;
    rec.fold = f;
    rec.history = train(m, ds, tr, s.folds[f], prop, run_cfg);
    rec.test = evaluate(m, ds, s.test, prop);
    runs[k] = std::move(rec);
    if (k == 0) first = std::move(m);
  }

  ProtocolResult out;
  out.first_model = std::move(first);
  out.first_test = splits[0].test;
  out.first_predictions = predict_events(out.first_model, ds, out.first_test, prop);
  out.report = RunReport::aggregate(model_kind_name(kind), param_count(out.first_model),
                                    std::move(runs));
  return out;
}

}  // namespace tiser
