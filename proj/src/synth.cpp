#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tiser/datakit.hpp"
#include "tiser/errors.hpp"
#include "tiser/rng.hpp"

namespace tiser {

namespace {

// Per-channel gains and phases are shared by every station so two stations at
// the same hypocentral distance see the same noiseless signal.
constexpr double kSGain[3] = {1.0, 0.85, 0.35};
constexpr double kPGain[3] = {0.35, 0.4, 1.0};
constexpr double kPhase[3] = {0.0, 1.1, 2.3};

// Rise-and-decay envelope peaking at 1 when x = 1.
double envelope(double x) { return x <= 0.0 ? 0.0 : x * std::exp(1.0 - x); }

struct Source {
  double f_s;    // dominant S frequency, Hz
  double f_p;    // dominant P frequency, Hz
  double tau_s;  // S envelope rise time, s
  double tau_p;
};

// Larger events are longer and richer in low frequencies; this is what makes
// magnitude recoverable from a normalised window.
Source source_for(double magnitude) {
  const double dm = magnitude - 3.0;
  Source s;
  s.f_s = 4.0 * std::pow(10.0, -0.25 * dm);
  s.f_p = 1.8 * s.f_s;
  s.tau_s = 0.4 * std::pow(10.0, 0.25 * dm);
  s.tau_p = 0.5 * s.tau_s;
  return s;
}

}  // namespace

StationSet synth_stations(std::size_t n, std::uint64_t seed, double lat_min, double lat_max,
                          double lon_min, double lon_max) {
  if (n < 2) throw InputError("need at least 2 stations");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(lat_min, lat_max);
  std::uniform_real_distribution<double> lon(lon_min, lon_max);
  std::vector<Station> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "ST%03zu", i);
    const double la = lat(rng);
    out.push_back({id, {la, lon(rng)}});
  }
  return StationSet(std::move(out));
}

SynthEvent draw_event(const StationSet& stations, const SynthParams& params, std::uint64_t seed) {
  double la0 = 90, la1 = -90, lo0 = 180, lo1 = -180;
  for (const Station& s : stations.stations()) {
    la0 = std::min(la0, s.location.lat);
    la1 = std::max(la1, s.location.lat);
    lo0 = std::min(lo0, s.location.lon);
    lo1 = std::max(lo1, s.location.lon);
  }
  const double mla = (la1 - la0) * params.hull_margin;
  const double mlo = (lo1 - lo0) * params.hull_margin;
  std::mt19937_64 rng(seed);
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  SynthEvent ev;
  ev.epicenter.lat = std::clamp(uniform(la0 - mla, la1 + mla), -90.0, 90.0);
  ev.epicenter.lon = std::clamp(uniform(lo0 - mlo, lo1 + mlo), -180.0, 180.0);
  ev.depth_km = uniform(params.depth_min_km, params.depth_max_km);
  ev.magnitude = uniform(params.magnitude_min, params.magnitude_max);
  ev.origin_time_s = uniform(0.5, 2.0);
  ev.seed = mix_seed(seed, 0x5EED);
  return ev;
}

Tensor synth_waveforms(const StationSet& stations, const SynthEvent& event,
                       const SynthParams& params) {
  if (params.sample_rate_hz == 0 || params.channels == 0) {
    throw InputError("sample rate and channel count must be positive");
  }
  if (!(params.vp_km_s > params.vs_km_s && params.vs_km_s > 0.0)) {
    throw InputError("wave speeds must satisfy vp > vs > 0");
  }
  const std::size_t n = stations.size();
  const std::size_t t = params.total_seconds * params.sample_rate_hz;
  const std::size_t c = params.channels;
  const double dt = 1.0 / static_cast<double>(params.sample_rate_hz);
  const Source src = source_for(event.magnitude);
  const double amp = std::pow(10.0, event.magnitude - 3.0);
  Tensor w({n, t, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double epi = geodesic_km(event.epicenter, stations[i].location);
    const double r = std::hypot(epi, event.depth_km);
    const double a_s = amp / (r + params.d0_km);
    const double a_p = params.p_ratio * a_s;
    const double t_p = event.origin_time_s + r / params.vp_km_s;
    const double t_s = event.origin_time_s + r / params.vs_km_s;
    // Scattering stretches the S coda with distance.
    const double tau_s = src.tau_s * (1.0 + r / 100.0);
    const double tau_p = src.tau_p * (1.0 + r / 100.0);
    std::mt19937_64 rng(mix_seed(event.seed, i));
    std::normal_distribution<double> noise(0.0, 1.0);
    double* out = w.ptr() + i * t * c;
    for (std::size_t k = 0; k < t; ++k) {
      const double time = static_cast<double>(k) * dt;
      const double ep = envelope((time - t_p) / tau_p);
      const double es = envelope((time - t_s) / tau_s);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t m = ch % 3;
        double v = 0.0;
        if (ep > 0.0) v += a_p * kPGain[m] * ep * std::sin(2 * M_PI * src.f_p * (time - t_p) + kPhase[m]);
        if (es > 0.0) v += a_s * kSGain[m] * es * std::sin(2 * M_PI * src.f_s * (time - t_s) + kPhase[m]);
        if (params.noise > 0.0) v += params.noise * noise(rng);
        out[k * c + ch] = v;
      }
    }
  }
  return w;
}

EventDataset synth_dataset(const StationSet& stations, std::size_t n_events, std::uint64_t seed,
                           const SynthParams& params) {
  if (n_events < 1) throw InputError("n_events must be >= 1");
  if (params.total_seconds <= params.input_seconds) {
    throw InputError("total_seconds must exceed input_seconds so labels depend on the hidden part");
  }
  EventDataset ds;
  ds.stations = stations;
  ds.events = n_events;
  ds.nodes = stations.size();
  ds.samples = params.input_seconds * params.sample_rate_hz;
  ds.channels = params.channels;
  ds.sample_rate_hz = params.sample_rate_hz;
  const std::size_t xs = ds.nodes * ds.samples * ds.channels;
  const std::size_t ys = kNumTargets * ds.nodes;
  ds.x.assign(n_events * xs, 0.0f);
  ds.y.assign(n_events * ys, 0.0f);
  const double dt = 1.0 / static_cast<double>(params.sample_rate_hz);
  const std::size_t total = params.total_seconds * params.sample_rate_hz;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t e = 0; e < n_events; ++e) {
    const SynthEvent ev = draw_event(stations, params, mix_seed(seed, e));
    const Tensor w = synth_waveforms(stations, ev, params);
    Tensor window({ds.nodes, ds.samples, ds.channels});
    for (std::size_t i = 0; i < ds.nodes; ++i) {
      std::copy_n(w.ptr() + i * total * ds.channels, ds.samples * ds.channels,
                  window.ptr() + i * ds.samples * ds.channels);
      Tensor trace({total, ds.channels});
      std::copy_n(w.ptr() + i * total * ds.channels, total * ds.channels, trace.ptr());
      const auto im = compute_ims(trace, dt).values();
      for (std::size_t h = 0; h < kNumTargets; ++h) {
        ds.y[e * ys + h * ds.nodes + i] = static_cast<float>(std::log10(im[h] + kLogFloor));
      }
    }
    const NormalizedEvent norm = normalize_by_input_max(window);
    std::transform(norm.x.data().begin(), norm.x.data().end(), ds.x.begin() + static_cast<std::ptrdiff_t>(e * xs),
                   [](double v) { return static_cast<float>(v); });
  }
  return ds;
}

}  // namespace tiser
