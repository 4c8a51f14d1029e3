#include <algorithm>
#include <cmath>

#include "tiser/datakit.hpp"
#include "tiser/errors.hpp"

namespace tiser {

Tensor EventDataset::input(std::size_t event) const {
  if (event >= events) throw InputError("event index out of range");
  const std::size_t stride = nodes * samples * channels;
  Tensor t({nodes, samples, channels});
  std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(event * stride), stride, t.ptr());
  return t;
}

Tensor EventDataset::target(std::size_t event) const {
  if (event >= events) throw InputError("event index out of range");
  const std::size_t stride = kNumTargets * nodes;
  Tensor t({kNumTargets, nodes});
  std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(event * stride), stride, t.ptr());
  return t;
}

void EventDataset::validate() const {
  if (stations.size() != nodes) {
    throw ConsistencyError("dataset has N=" + std::to_string(nodes) + " but " +
                           std::to_string(stations.size()) + " stations");
  }
  if (x.size() != events * nodes * samples * channels) {
    throw ConsistencyError("X holds " + std::to_string(x.size()) + " values, expected E*N*T*C = " +
                           std::to_string(events * nodes * samples * channels));
  }
  if (y.size() != events * kNumTargets * nodes) {
    throw ConsistencyError("Y holds " + std::to_string(y.size()) + " values, expected E*5*N = " +
                           std::to_string(events * kNumTargets * nodes));
  }
  const auto finite = [](float v) { return std::isfinite(v); };
  if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
    throw ConsistencyError("dataset contains non-finite values");
  }
}

EventDataset EventDataset::subset(std::span<const std::size_t> indices) const {
  EventDataset out = *this;
  out.events = indices.size();
  out.x.clear();
  out.y.clear();
  const std::size_t xs = nodes * samples * channels;
  const std::size_t ys = kNumTargets * nodes;
  for (std::size_t e : indices) {
    if (e >= events) throw InputError("subset index out of range");
    out.x.insert(out.x.end(), x.begin() + static_cast<std::ptrdiff_t>(e * xs),
                 x.begin() + static_cast<std::ptrdiff_t>((e + 1) * xs));
    out.y.insert(out.y.end(), y.begin() + static_cast<std::ptrdiff_t>(e * ys),
                 y.begin() + static_cast<std::ptrdiff_t>((e + 1) * ys));
  }
  return out;
}

EventDataset EventDataset::truncated(std::size_t seconds) const {
  EventDataset out = *this;
  out.samples = seconds * sample_rate_hz;
  if (out.samples > samples) {
    throw InputError("cannot truncate a " + std::to_string(input_seconds()) + " s window to " +
                     std::to_string(seconds) + " s");
  }
  out.x.clear();
  out.x.reserve(events * nodes * out.samples * channels);
  for (std::size_t e = 0; e < events; ++e) {
    const Tensor cut = truncate_window(input(e), seconds, sample_rate_hz);
    for (double v : cut.data()) out.x.push_back(static_cast<float>(v));
  }
  return out;
}

NormalizedEvent normalize_by_input_max(const Tensor& x_event) {
  const double m = max_abs(x_event);
  if (!(m > 0.0)) throw DegenerateError("event input is all zeros; cannot normalise");
  if (!std::isfinite(m)) throw InputError("event input contains non-finite values");
  Tensor out = x_event;
  for (double& v : out.data()) v /= m;
  return {std::move(out), m};
}

Tensor truncate_window(const Tensor& x_event, std::size_t seconds, std::size_t sample_rate_hz) {
  if (seconds < 4 || seconds > 10) {
    throw InputError("window length must lie in [4, 10] s, got " + std::to_string(seconds));
  }
  if (x_event.rank() != 3) throw ShapeError("truncate_window expects [N,T,C]");
  const std::size_t n = x_event.dim(0), t = x_event.dim(1), c = x_event.dim(2);
  const std::size_t keep = seconds * sample_rate_hz;
  if (keep > t) {
    throw InputError("window of " + std::to_string(keep) + " samples exceeds input length " +
                     std::to_string(t));
  }
  Tensor out({n, keep, c});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x_event.ptr() + i * t * c, keep * c, out.ptr() + i * keep * c);
  }
  return normalize_by_input_max(out).x;
}

double spectral_acceleration(std::span<const double> accel, double dt, double period_s,
                             double damping) {
  if (!(dt > 0.0)) throw InputError("time step must be positive");
  if (!(period_s > 0.0)) throw InputError("oscillator period must be positive");
  if (accel.empty()) return 0.0;
  constexpr double gamma = 0.5;
  constexpr double beta = 0.25;
  const double omega = 2.0 * M_PI / period_s;
  const double c = 2.0 * damping * omega;
  const double k = omega * omega;
  const double k_hat = k + gamma / (beta * dt) * c + 1.0 / (beta * dt * dt);
  const double a_coef = 1.0 / (beta * dt) + gamma / beta * c;
  const double b_coef = 1.0 / (2.0 * beta) + dt * (gamma / (2.0 * beta) - 1.0) * c;

  // Incremental form for a unit mass under effective load p = -a_g; only the
  // relative velocity and acceleration need to be carried between steps.
  double v = 0.0;
  double a = -accel[0];
  double peak = std::abs(a + accel[0]);
  for (std::size_t i = 0; i + 1 < accel.size(); ++i) {
    const double dp = -(accel[i + 1] - accel[i]);
    const double dp_hat = dp + a_coef * v + b_coef * a;
    const double du = dp_hat / k_hat;
    const double dv = gamma / (beta * dt) * du - gamma / beta * v + dt * (1.0 - gamma / (2.0 * beta)) * a;
    const double da = du / (beta * dt * dt) - v / (beta * dt) - a / (2.0 * beta);
    v += dv;
    a += da;
    peak = std::max(peak, std::abs(a + accel[i + 1]));
  }
  return peak;
}

IntensityMeasures compute_ims(const Tensor& w, double dt) {
  if (!(dt > 0.0)) throw InputError("time step must be positive");
  if (w.rank() != 2) throw ShapeError("compute_ims expects [T,C]");
  const std::size_t t = w.dim(0), channels = w.dim(1);
  if (t < 2) throw InputError("compute_ims needs at least 2 samples");
  IntensityMeasures im;
  std::vector<double> trace(t);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < t; ++i) trace[i] = w.at(i, c);
    double vel = 0.0;
    double pgv = 0.0;
    double pga = std::abs(trace[0]);
    for (std::size_t i = 1; i < t; ++i) {
      vel += 0.5 * dt * (trace[i - 1] + trace[i]);
      pgv = std::max(pgv, std::abs(vel));
      pga = std::max(pga, std::abs(trace[i]));
    }
    im.pga = std::max(im.pga, pga);
    im.pgv = std::max(im.pgv, pgv);
    im.sa03 = std::max(im.sa03, spectral_acceleration(trace, dt, 0.3));
    im.sa1 = std::max(im.sa1, spectral_acceleration(trace, dt, 1.0));
    im.sa3 = std::max(im.sa3, spectral_acceleration(trace, dt, 3.0));
  }
  return im;
}

}  // namespace tiser
