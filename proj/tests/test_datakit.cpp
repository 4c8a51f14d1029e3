#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "tiser/datakit.hpp"
#include "tiser/errors.hpp"
#include "tiser/rng.hpp"

using namespace tiser;
using namespace tiser::testing;
namespace fs = std::filesystem;

namespace {

// Peak absolute acceleration of the damped oscillator under a_g(t), by RK4 on
// the continuous input at a much finer step.
double sa_oracle(const std::function<double(double)>& ag, double duration, double period,
                 double zeta) {
  const double w = 2 * M_PI / period;
  const double h = 1e-4;
  double u = 0, v = 0, peak = 0;
  auto acc = [&](double t, double uu, double vv) { return -ag(t) - 2 * zeta * w * vv - w * w * uu; };
  for (double t = 0; t < duration; t += h) {
    const double k1u = v, k1v = acc(t, u, v);
    const double k2u = v + 0.5 * h * k1v, k2v = acc(t + h / 2, u + 0.5 * h * k1u, v + 0.5 * h * k1v);
    const double k3u = v + 0.5 * h * k2v, k3v = acc(t + h / 2, u + 0.5 * h * k2u, v + 0.5 * h * k2v);
    const double k4u = v + h * k3v, k4v = acc(t + h, u + h * k3u, v + h * k3v);
    u += h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
    peak = std::max(peak, std::abs(2 * zeta * w * v + w * w * u));
  }
  return peak;
}

StationSet line_stations() {
  return StationSet({{"A", {0.0, 0.0}}, {"B", {0.0, 0.2}}, {"C", {0.0, -0.2}}, {"D", {0.0, 0.5}}});
}

SynthParams quiet() {
  SynthParams p;
  p.noise = 0.0;
  p.sample_rate_hz = 50;
  p.total_seconds = 30;
  return p;
}

std::size_t first_onset(const Tensor& w, std::size_t node) {
  const std::size_t t = w.dim(1), c = w.dim(2);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      if (w.at(node, k, ch) != 0.0) return k;
  return t;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("tiser_dk_" + std::to_string(::getpid()) + "_" +
                                                 std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str() const { return path_.string(); }
  fs::path operator/(const char* f) const { return path_ / f; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

EventDataset small_dataset() {
  SynthParams p;
  p.sample_rate_hz = 20;
  p.total_seconds = 20;
  return synth_dataset(synth_stations(4, 3), 3, 5, p);
}

}  // namespace

TEST(Normalize, DividesByLargestMagnitude) {
  const Tensor x({1, 2, 2}, {1, -4, 2, 0.5});
  const NormalizedEvent n = normalize_by_input_max(x);
  EXPECT_EQ(n.scale, 4.0);
  EXPECT_EQ(n.x, Tensor({1, 2, 2}, {0.25, -1, 0.5, 0.125}));
  EXPECT_EQ(max_abs(n.x), 1.0);
}

TEST(Normalize, AllZeroIsDegenerate) {
  EXPECT_THROW(normalize_by_input_max(Tensor({2, 3, 1})), DegenerateError);
}

TEST(Normalize, ScaleInvariant) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 10, 3}, rng);
  Tensor y = x;
  for (double& v : y.data()) v *= 37.5;
  EXPECT_LT(max_abs_diff(normalize_by_input_max(x).x, normalize_by_input_max(y).x), 1e-15);
}

TEST(Truncate, KeepsLeadingSamplesThenRenormalizes) {
  Tensor x({2, 50, 1});
  for (std::size_t k = 0; k < 50; ++k) {
    x.at(0, k, 0) = static_cast<double>(k);
    x.at(1, k, 0) = -static_cast<double>(k) / 2;
  }
  const Tensor t = truncate_window(x, 4, 10);
  ASSERT_EQ(t.shape(), (Shape{2, 40, 1}));
  EXPECT_DOUBLE_EQ(t.at(0, 39, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 13, 0), 13.0 / 39.0);
  EXPECT_DOUBLE_EQ(t.at(1, 39, 0), -0.5);
}

TEST(Truncate, RejectsOutOfRangeWindows) {
  const Tensor x({1, 100, 1}, 1.0);
  EXPECT_THROW(truncate_window(x, 3, 10), InputError);
  EXPECT_THROW(truncate_window(x, 11, 10), InputError);
  EXPECT_THROW(truncate_window(Tensor({1, 30, 1}, 1.0), 4, 10), InputError);
}

TEST(Truncate, DatasetTruncationMatchesPerEvent) {
  const EventDataset ds = small_dataset();
  const EventDataset t = ds.truncated(5);
  EXPECT_EQ(t.samples, 100u);
  for (std::size_t e = 0; e < ds.events; ++e) {
    const Tensor expect = truncate_window(ds.input(e), 5, 20);
    EXPECT_LT(max_abs_diff(t.input(e), expect), 1e-7);
  }
}

TEST(Ims, ZeroTraceGivesZero) {
  const auto im = compute_ims(Tensor({100, 3}), 0.01).values();
  for (double v : im) EXPECT_EQ(v, 0.0);
}

TEST(Ims, SingleSpike) {
  Tensor w({50, 1});
  w.at(10, 0) = -2.0;
  const IntensityMeasures im = compute_ims(w, 0.01);
  EXPECT_EQ(im.pga, 2.0);
  EXPECT_NEAR(im.pgv, 0.02, 1e-15);
  EXPECT_GT(im.sa03, 0.0);
}

TEST(Ims, MaximumOverChannels) {
  Tensor w({4, 2});
  w.at(1, 0) = 1.0;
  w.at(2, 1) = 3.0;
  EXPECT_EQ(compute_ims(w, 0.1).pga, 3.0);
}

TEST(Ims, LinearInAmplitude) {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({400, 3}, rng);
  Tensor w2 = w;
  for (double& v : w2.data()) v *= 3.0;
  const auto a = compute_ims(w, 0.01).values(), b = compute_ims(w2, 0.01).values();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-12 * b[i]);
}

TEST(Ims, RejectsBadInput) {
  EXPECT_THROW(compute_ims(Tensor({1, 3}), 0.01), InputError);
  EXPECT_THROW(compute_ims(Tensor({10, 3}), 0.0), InputError);
  EXPECT_THROW(compute_ims(Tensor({10}), 0.01), ShapeError);
}

TEST(SpectralAcceleration, ResonanceMatchesFineStepOracle) {
  for (double period : {0.3, 1.0, 3.0}) {
    const double dt = 0.01, duration = 10 * period + 5;
    auto ag = [&](double t) { return std::sin(2 * M_PI * t / period); };
    std::vector<double> a;
    for (double t = 0; t < duration; t += dt) a.push_back(ag(a.size() * dt));
    const double got = spectral_acceleration(a, dt, period);
    const double want = sa_oracle(ag, duration, period, kSaDamping);
    EXPECT_NEAR(got, want, 0.02 * want) << "T=" << period;
    EXPECT_GT(got, 5.0);
  }
}

TEST(SpectralAcceleration, RigidOscillatorFollowsGround) {
  std::vector<double> a(2000);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::sin(2 * M_PI * 0.2 * i * 0.01);
  EXPECT_NEAR(spectral_acceleration(a, 0.01, 0.02), 1.0, 0.01);
}

TEST(Synth, Deterministic) {
  SynthParams p;
  p.sample_rate_hz = 20;
  p.total_seconds = 20;
  const StationSet st = synth_stations(5, 1);
  EXPECT_EQ(synth_stations(5, 1), st);
  EXPECT_EQ(synth_dataset(st, 4, 9, p), synth_dataset(st, 4, 9, p));
  EXPECT_NE(synth_dataset(st, 4, 9, p).y, synth_dataset(st, 4, 10, p).y);
}

TEST(Synth, EventsStayInRanges) {
  const StationSet st = synth_stations(10, 2);
  const SynthParams p;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const SynthEvent ev = draw_event(st, p, s);
    EXPECT_GE(ev.magnitude, 3.0);
    EXPECT_LE(ev.magnitude, 5.0);
    EXPECT_GE(ev.depth_km, 2.0);
    EXPECT_LE(ev.depth_km, 20.0);
    EXPECT_GE(ev.epicenter.lat, 42.0 - 0.075 - 1e-12);
    EXPECT_LE(ev.epicenter.lat, 42.75 + 0.075 + 1e-12);
  }
}

TEST(Synth, EarliestOnsetAtEpicentralStation) {
  const StationSet st = line_stations();
  SynthEvent ev;
  ev.epicenter = {0.0, 0.0};
  ev.depth_km = 8.0;
  ev.magnitude = 4.0;
  ev.origin_time_s = 1.0;
  const Tensor w = synth_waveforms(st, ev, quiet());
  const std::size_t a = first_onset(w, 0);
  for (std::size_t i = 1; i < st.size(); ++i) EXPECT_LT(a, first_onset(w, i));
  EXPECT_LT(first_onset(w, 1), first_onset(w, 3));
}

TEST(Synth, EqualDistanceStationsSeeEqualSignals) {
  const StationSet st = line_stations();
  SynthEvent ev;
  ev.depth_km = 5.0;
  ev.magnitude = 4.5;
  ev.origin_time_s = 0.7;
  const Tensor w = synth_waveforms(st, ev, quiet());
  double worst = 0.0;
  for (std::size_t k = 0; k < w.dim(1); ++k)
    for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(w.at(1, k, c) - w.at(2, k, c)));
  EXPECT_LT(worst, 1e-9);
}

TEST(Synth, LabelsComeFromTheFullRecord) {
  SynthParams p;
  p.sample_rate_hz = 20;
  p.total_seconds = 30;
  p.input_seconds = 4;
  const StationSet st = synth_stations(6, 4);
  const EventDataset ds = synth_dataset(st, 3, 8, p);
  EXPECT_EQ(ds.samples, 80u);
  bool hidden_matters = false;
  for (std::size_t e = 0; e < ds.events; ++e) {
    const Tensor w = synth_waveforms(st, draw_event(st, p, mix_seed(8, e)), p);
    const Tensor y = ds.target(e);
    for (std::size_t i = 0; i < st.size(); ++i) {
      Tensor full({w.dim(1), 3}), head({80, 3});
      std::copy_n(w.ptr() + i * w.dim(1) * 3, full.size(), full.ptr());
      std::copy_n(full.ptr(), head.size(), head.ptr());
      const auto im = compute_ims(full, 0.05).values();
      const auto im_head = compute_ims(head, 0.05).values();
      for (std::size_t h = 0; h < 5; ++h) {
        EXPECT_FLOAT_EQ(static_cast<float>(y.at(h, i)),
                        static_cast<float>(std::log10(im[h] + kLogFloor)));
        if (std::abs(std::log10(im_head[h] + kLogFloor) - y.at(h, i)) > 0.1) hidden_matters = true;
      }
    }
  }
  EXPECT_TRUE(hidden_matters);
}

TEST(Synth, InputsAreNormalized) {
  const EventDataset ds = small_dataset();
  ds.validate();
  for (std::size_t e = 0; e < ds.events; ++e) EXPECT_NEAR(max_abs(ds.input(e)), 1.0, 1e-7);
}

TEST(Synth, RejectsBadArguments) {
  SynthParams p;
  EXPECT_THROW(synth_dataset(synth_stations(3, 1), 0, 1, p), InputError);
  p.total_seconds = p.input_seconds;
  EXPECT_THROW(synth_dataset(synth_stations(3, 1), 2, 1, p), InputError);
}

TEST(Dataset, SubsetPicksEvents) {
  const EventDataset ds = small_dataset();
  const std::vector<std::size_t> idx{2, 0};
  const EventDataset s = ds.subset(idx);
  EXPECT_EQ(s.events, 2u);
  EXPECT_EQ(s.input(0), ds.input(2));
  EXPECT_EQ(s.target(1), ds.target(0));
  EXPECT_THROW(ds.subset(std::vector<std::size_t>{3}), InputError);
}

TEST(DatasetIo, RoundTripIsExact) {
  TempDir d;
  const EventDataset ds = small_dataset();
  save_dataset(d.str(), ds);
  EXPECT_EQ(load_dataset(d.str()), ds);
}

namespace {

void edit_manifest(const TempDir& d, const std::function<void(nlohmann::json&)>& f) {
  nlohmann::json m;
  std::ifstream(d / "manifest.json") >> m;
  f(m);
  std::ofstream(d / "manifest.json") << m.dump();
}

}  // namespace

TEST(DatasetIo, ErrorKinds) {
  const EventDataset ds = small_dataset();
  {
    TempDir d;
    save_dataset(d.str(), ds);
    edit_manifest(d, [](nlohmann::json& m) { m["version"] = 99; });
    EXPECT_THROW(load_dataset(d.str()), VersionError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    edit_manifest(d, [](nlohmann::json& m) { m["byte_order"] = "big-endian"; });
    EXPECT_THROW(load_dataset(d.str()), FormatError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    edit_manifest(d, [](nlohmann::json& m) { m["dtype"] = "f64"; });
    EXPECT_THROW(load_dataset(d.str()), FormatError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    edit_manifest(d, [](nlohmann::json& m) { m["N"] = 5; });
    EXPECT_THROW(load_dataset(d.str()), ConsistencyError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    fs::resize_file(d / "X.bin", fs::file_size(d / "X.bin") - 4);
    EXPECT_THROW(load_dataset(d.str()), TruncatedError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    std::ofstream(d / "Y.bin", std::ios::app | std::ios::binary) << "abcd";
    EXPECT_THROW(load_dataset(d.str()), ConsistencyError);
  }
  {
    TempDir d;
    save_dataset(d.str(), ds);
    std::ofstream(d / "manifest.json") << "{\"version\": 1,";
    EXPECT_THROW(load_dataset(d.str()), FormatError);
  }
  EXPECT_THROW(load_dataset("/nonexistent/tiser"), IoError);
}
