#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "tiser/errors.hpp"
#include "tiser/trainkit.hpp"

using namespace tiser;
using namespace tiser::testing;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.input_seconds = 4;
  c.sample_rate_hz = 10;
  c.conv = {{4, 5, 2, Activation::kRelu}, {6, 5, 2, Activation::kRelu}};
  c.gcn = {{8, Activation::kRelu}, {8, Activation::kTanh}};
  c.dense_width = 16;
  c.cross_filters = 5;
  return c;
}

const EventDataset& tiny_data() {
  static const EventDataset ds = [] {
    SynthParams p;
    p.sample_rate_hz = 10;
    p.input_seconds = 4;
    p.total_seconds = 15;
    return synth_dataset(synth_stations(5, 2), 30, 4, p);
  }();
  return ds;
}

PropagationMatrix tiny_prop() {
  return propagation(build_adjacency(tiny_data().stations, 0.3), PropagationKind::kKipfRenormalized);
}

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> v(b - a);
  std::iota(v.begin(), v.end(), a);
  return v;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.batch_size = 5;
  t.max_epochs = epochs;
  t.optimizer.lr = 0.003;
  return t;
}

std::vector<Tensor> values(Model& m) {
  std::vector<Tensor> out;
  for (const ParamRef& p : m.parameters()) out.push_back(*p.value);
  return out;
}

}  // namespace

TEST(RmsProp, HandStep) {
  Tensor w = Tensor::from({1.0});
  Tensor* ptr = &w;
  const std::vector<Tensor> g{Tensor::from({1.0})};
  RmsPropState st;
  rmsprop_step(std::span<Tensor* const>(&ptr, 1), g, st, {});
  EXPECT_NEAR(w[0] - 1.0, -0.0031623, 1e-7);
  EXPECT_NEAR(st.v[0][0], 0.1, 1e-15);
  rmsprop_step(std::span<Tensor* const>(&ptr, 1), g, st, {});
  EXPECT_NEAR(st.v[0][0], 0.19, 1e-15);
  EXPECT_NEAR(w[0] - 1.0, -0.0031623 - 0.001 / (std::sqrt(0.19) + 1e-7), 1e-7);
}

TEST(RmsProp, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::from({0.5, -2.0});
  Tensor* ptr = &w;
  RmsPropState st;
  rmsprop_step(std::span<Tensor* const>(&ptr, 1), std::vector<Tensor>{Tensor({2})}, st, {});
  EXPECT_EQ(w, Tensor::from({0.5, -2.0}));
}

TEST(RmsProp, TensorsAreIndependent) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 2}, rng), b = random_tensor({4}, rng);
  const Tensor ga = random_tensor({3, 2}, rng), gb = random_tensor({4}, rng);
  Tensor a2 = a, b2 = b;
  std::vector<Tensor*> both{&a, &b};
  RmsPropState s1, s2, s3;
  rmsprop_step(both, std::vector<Tensor>{ga, gb}, s1, {});
  Tensor* pa = &a2;
  Tensor* pb = &b2;
  rmsprop_step(std::span<Tensor* const>(&pa, 1), std::vector<Tensor>{ga}, s2, {});
  rmsprop_step(std::span<Tensor* const>(&pb, 1), std::vector<Tensor>{gb}, s3, {});
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
}

TEST(RmsProp, NonFiniteGradientNamesTensor) {
  Tensor w = Tensor::from({1.0});
  Tensor* ptr = &w;
  RmsPropState st;
  const std::vector<std::string> names{"gcn1.weight"};
  try {
    rmsprop_step(std::span<Tensor* const>(&ptr, 1), std::vector<Tensor>{Tensor::from({NAN})}, st,
                 {}, names);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("gcn1.weight"), std::string::npos);
  }
}

TEST(Split, ArithmeticForHundredEvents) {
  const auto splits = split_protocol(100, 3);
  ASSERT_EQ(splits.size(), 5u);
  for (const Split& s : splits) {
    EXPECT_EQ(s.test.size(), 20u);
    ASSERT_EQ(s.folds.size(), 5u);
    std::set<std::size_t> all(s.test.begin(), s.test.end());
    for (const auto& f : s.folds) {
      EXPECT_EQ(f.size(), 16u);
      all.insert(f.begin(), f.end());
    }
    EXPECT_EQ(all.size(), 100u);
    EXPECT_EQ(s.train_indices(0).size(), 64u);
    EXPECT_EQ(s.train_indices(5).size(), 80u);
  }
  EXPECT_NE(splits[0].test, splits[1].test);
}

TEST(Split, UnevenFoldsDifferByOne) {
  const auto s = split_protocol(37, 1, 5, 1)[0];
  EXPECT_EQ(s.test.size(), 7u);
  std::size_t lo = 99, hi = 0;
  for (const auto& f : s.folds) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
  }
  EXPECT_LE(hi - lo, 1u);
  EXPECT_EQ(split_protocol(37, 1, 5, 1)[0].folds, s.folds);
}

TEST(Metrics, ShiftLaw) {
  std::mt19937_64 rng(2);
  std::vector<Tensor> truth, pred;
  for (int i = 0; i < 4; ++i) {
    truth.push_back(random_tensor({5, 3}, rng));
    Tensor p = truth.back();
    for (double& v : p.data()) v -= 0.3;
    pred.push_back(p);
  }
  const Metrics m = evaluate_predictions(pred, truth);
  EXPECT_NEAR(m.overall.mae, 0.3, 1e-12);
  EXPECT_NEAR(m.overall.mse, 0.09, 1e-12);
  EXPECT_NEAR(m.overall.rmse, 0.3, 1e-12);
  for (const ImMetrics& im : m.per_im) EXPECT_NEAR(im.mse, 0.09, 1e-12);
}

TEST(Metrics, PerImRows) {
  Tensor t({5, 2}), p({5, 2});
  p.at(3, 0) = 2.0;
  const Metrics m = evaluate_predictions(std::vector<Tensor>{p}, std::vector<Tensor>{t});
  EXPECT_EQ(m.per_im[3].mae, 1.0);
  EXPECT_EQ(m.per_im[3].mse, 2.0);
  EXPECT_EQ(m.per_im[0].mse, 0.0);
  EXPECT_DOUBLE_EQ(m.overall.mse, 0.4);
}

TEST(Report, RmseSquaredEqualsMse) {
  std::vector<RunRecord> runs(3);
  const double mses[] = {0.1, 0.4, 0.25};
  for (std::size_t r = 0; r < 3; ++r) {
    runs[r].fold = r;
    runs[r].test.overall = {0.2, mses[r], std::sqrt(mses[r])};
    for (auto& im : runs[r].test.per_im) im = runs[r].test.overall;
  }
  const RunReport rep = RunReport::aggregate("x", 1, runs);
  EXPECT_NEAR(rep.overall.mse.mean, 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(rep.overall.rmse.mean * rep.overall.rmse.mean, rep.overall.mse.mean);
  for (const CellStats& c : rep.per_im) EXPECT_DOUBLE_EQ(c.rmse.mean * c.rmse.mean, c.mse.mean);
  std::ostringstream csv;
  rep.write_history_csv(csv);
  EXPECT_EQ(csv.str(), "repeat,fold,epoch,train_loss,val_loss\n");
}

TEST(EventLoss, L2AddsPenaltyOnRegularisedTensors) {
  Model m = build_tiser_gcn(tiny(), 5, 1);
  const EventDataset& ds = tiny_data();
  const Tensor z = ds.stations.coordinates();
  Tape t(false);
  const double with = event_loss(t, m, ds.input(0), ds.target(0), tiny_prop().matrix, z).value()[0];
  const double without =
      event_loss(t, m, ds.input(0), ds.target(0), tiny_prop().matrix, z, false).value()[0];
  double ss = 0.0;
  for (const ParamRef& p : m.parameters())
    if (p.regularized)
      for (double v : p.value->data()) ss += v * v;
  EXPECT_NEAR(with - without, tiny().l2 * ss, 1e-12);
}

TEST(Train, ZeroLearningRateFreezesParameters) {
  Model m = build_tiser_gcn(tiny(), 5, 3);
  const auto before = values(m);
  TrainConfig cfg = quick(2);
  cfg.optimizer.lr = 0.0;
  cfg.init_head_bias = false;
  train(m, tiny_data(), range(0, 20), {}, tiny_prop(), cfg);
  EXPECT_EQ(values(m), before);
}

TEST(Train, DeterministicAndReducesLoss) {
  const TrainConfig cfg = quick(8);
  Model a = build_tiser_gcn(tiny(), 5, 3), b = build_tiser_gcn(tiny(), 5, 3);
  const TrainHistory ha = train(a, tiny_data(), range(0, 20), {}, tiny_prop(), cfg);
  train(b, tiny_data(), range(0, 20), {}, tiny_prop(), cfg);
  EXPECT_EQ(values(a), values(b));
  ASSERT_EQ(ha.epochs.size(), 8u);
  EXPECT_LT(ha.epochs.back().train_loss, ha.epochs.front().train_loss);
  EXPECT_TRUE(std::isnan(ha.best_val));
}

TEST(Train, RestoresBestValidationWeights) {
  TrainConfig cfg = quick(15);
  cfg.optimizer.lr = 0.02;
  cfg.patience = 3;
  Model m = build_tiser_gcn(tiny(), 5, 4);
  const auto val = range(20, 30);
  const TrainHistory h = train(m, tiny_data(), range(0, 20), val, tiny_prop(), cfg);
  double best = INFINITY;
  for (const EpochRecord& e : h.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(h.best_val, best);
  EXPECT_EQ(h.epochs[h.best_epoch - 1].val_loss, best);
  EXPECT_NEAR(evaluate(m, tiny_data(), val, tiny_prop()).overall.mse, best, 1e-12);
  if (h.stopped_early) EXPECT_EQ(h.epochs.size(), h.best_epoch + cfg.patience);
}

TEST(Train, HeadBiasStartsAtTargetMean) {
  Model m = build_tiser_gcn(tiny(), 5, 5);
  m.zero_heads();
  TrainConfig cfg = quick(1);
  cfg.optimizer.lr = 0.0;
  const auto idx = range(0, 20);
  train(m, tiny_data(), idx, {}, tiny_prop(), cfg);
  Tensor mean({5, 5});
  for (std::size_t e : idx) {
    const Tensor y = tiny_data().target(e);
    for (std::size_t i = 0; i < 25; ++i) mean[i] += y[i] / 20.0;
  }
  const Tensor pred = predict_events(m, tiny_data(), std::vector<std::size_t>{25}, tiny_prop())[0];
  EXPECT_LT(max_abs_diff(pred, mean), 1e-12);
}

TEST(Train, StopAtTrainMse) {
  TrainConfig cfg = quick(50);
  cfg.stop_at_train_mse = 1e9;
  Model m = build_tiser_gcn(tiny(), 5, 6);
  const TrainHistory h = train(m, tiny_data(), range(0, 20), {}, tiny_prop(), cfg);
  EXPECT_EQ(h.epochs.size(), 1u);
  EXPECT_LT(h.final_train_mse, 1e9);
}

TEST(Train, RejectsMismatchedDataset) {
  ModelConfig c = tiny();
  c.input_seconds = 5;
  Model m = build_tiser_gcn(c, 5, 1);
  EXPECT_THROW(train(m, tiny_data(), range(0, 5), {}, tiny_prop(), quick(1)), ShapeError);
}

TEST(TrainConfigJson, RoundTripAndValidation) {
  TrainConfig t = quick(7);
  t.seed = 99;
  t.folds_used = 2;
  const nlohmann::json j = t;
  EXPECT_EQ(j.get<TrainConfig>(), t);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.test_fraction = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Protocol, IndependentOfJobCount) {
  TrainConfig cfg = quick(3);
  cfg.repeats = 2;
  cfg.folds = 3;
  cfg.folds_used = 2;
  const auto r1 = run_protocol(ModelKind::kTiserGcn, tiny(), tiny_data(), tiny_prop(), cfg, 1);
  const auto r2 = run_protocol(ModelKind::kTiserGcn, tiny(), tiny_data(), tiny_prop(), cfg, 3);
  ASSERT_EQ(r1.report.runs.size(), 4u);
  EXPECT_EQ(r1.report.to_json(), r2.report.to_json());
  EXPECT_EQ(r1.first_predictions, r2.first_predictions);
  EXPECT_EQ(r1.first_test.size(), 6u);
}
