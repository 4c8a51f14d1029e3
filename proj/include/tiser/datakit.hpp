#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tiser/geo_graph.hpp"
#include "tiser/targets.hpp"
#include "tiser/tensor.hpp"

namespace tiser {

// Floor added before taking log10 of an intensity measure.
inline constexpr double kLogFloor = 1e-12;

// Events stored as f32, the on-disk precision, so save/load is bit-exact.
// X is row-major [E, N, T, C] and already normalised per event; Y is
// row-major [E, 5, N] holding log10 intensity measures.
struct EventDataset {
  StationSet stations;
  std::size_t events = 0;
  std::size_t nodes = 0;
  std::size_t samples = 0;
  std::size_t channels = 0;
  std::size_t sample_rate_hz = 0;
  std::vector<float> x;
  std::vector<float> y;

  std::size_t input_seconds() const { return sample_rate_hz ? samples / sample_rate_hz : 0; }

  // [N, T, C] and [5, N] as doubles.
  Tensor input(std::size_t event) const;
  Tensor target(std::size_t event) const;

  // Throws ConsistencyError when sizes disagree or values are not finite.
  void validate() const;

  EventDataset subset(std::span<const std::size_t> indices) const;
  // Every event cut to the first `seconds` and re-normalised.
  EventDataset truncated(std::size_t seconds) const;

  bool operator==(const EventDataset&) const = default;
};

struct NormalizedEvent {
  Tensor x;
  double scale;
};

// Divides by the largest |sample| over all stations, channels and time steps.
NormalizedEvent normalize_by_input_max(const Tensor& x_event);

// Keeps the first seconds * sample_rate_hz samples of [N,T,C] and
// re-normalises. seconds must lie in [4, 10].
Tensor truncate_window(const Tensor& x_event, std::size_t seconds, std::size_t sample_rate_hz);

struct IntensityMeasures {
  double pga = 0.0;
  double pgv = 0.0;
  double sa03 = 0.0;
  double sa1 = 0.0;
  double sa3 = 0.0;

  std::array<double, 5> values() const { return {pga, pgv, sa03, sa1, sa3}; }
};

inline constexpr double kSaDamping = 0.05;

// Peak absolute acceleration response of a damped single-degree-of-freedom
// oscillator driven by ground acceleration `accel` (Newmark average
// acceleration, gamma = 1/2, beta = 1/4).
double spectral_acceleration(std::span<const double> accel, double dt, double period_s,
                             double damping = kSaDamping);

// w: [T, C] acceleration traces. Each measure is the maximum over channels.
IntensityMeasures compute_ims(const Tensor& w, double dt);

// ---------------------------------------------------------------- synthetic

struct SynthParams {
  std::size_t input_seconds = 10;
  std::size_t total_seconds = 60;
  std::size_t sample_rate_hz = 100;
  std::size_t channels = 3;
  double vp_km_s = 6.0;
  double vs_km_s = 3.5;
  double d0_km = 10.0;
  // P-wave amplitude as a fraction of the S-wave amplitude.
  double p_ratio = 0.06;
  // Standard deviation of additive white noise, m/s^2.
  double noise = 1e-4;
  double magnitude_min = 3.0;
  double magnitude_max = 5.0;
  double depth_min_km = 2.0;
  double depth_max_km = 20.0;
  // Epicentres are drawn from the station bounding box grown by this fraction.
  double hull_margin = 0.1;
};

struct SynthEvent {
  GeoPoint epicenter;
  double depth_km = 10.0;
  double magnitude = 4.0;
  double origin_time_s = 0.0;
  std::uint64_t seed = 0;
};

// Stations scattered uniformly over a lat/lon box (central-Italy-sized by
// default), ids ST000, ST001, ...
StationSet synth_stations(std::size_t n, std::uint64_t seed, double lat_min = 42.0,
                          double lat_max = 42.75, double lon_min = 12.3, double lon_max = 14.0);

SynthEvent draw_event(const StationSet& stations, const SynthParams& params, std::uint64_t seed);

// Full-length acceleration traces [N, total_seconds * rate, C].
Tensor synth_waveforms(const StationSet& stations, const SynthEvent& event,
                       const SynthParams& params);

EventDataset synth_dataset(const StationSet& stations, std::size_t n_events, std::uint64_t seed,
                           const SynthParams& params);

// ---------------------------------------------------------------- storage

inline constexpr int kDatasetVersion = 1;

// Directory with manifest.json, stations.csv, X.bin and Y.bin.
void save_dataset(const std::string& dir, const EventDataset& ds);
EventDataset load_dataset(const std::string& dir);

}  // namespace tiser
