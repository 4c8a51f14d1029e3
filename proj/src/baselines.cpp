#include "tiser/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>

#include <fftw3.h>

#include "tiser/errors.hpp"

namespace tiser {

namespace {

// FFTW's planner is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double spectral_energy(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(),
                                reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  // The r2c output holds bins 0..n/2; the rest are conjugates.
  double e = std::norm(out[0]);
  for (std::size_t k = 1; k < out.size(); ++k) {
    const bool nyquist = n % 2 == 0 && k == n / 2;
    e += (nyquist ? 1.0 : 2.0) * std::norm(out[k]);
  }
  return e;
}

struct Neighbour {
  double dist;
  std::size_t index;
};

// All training rows sorted by distance to `query`, then by index.
std::vector<Neighbour> rank_neighbours(const Tensor& train_x, const double* query) {
  const std::size_t n = train_x.dim(0), d = train_x.dim(1);
  std::vector<Neighbour> nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = train_x.ptr() + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - query[j];
      s += diff * diff;
    }
    nb[i] = {std::sqrt(s), i};
  }
  std::sort(nb.begin(), nb.end(), [](const Neighbour& a, const Neighbour& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
  });
  return nb;
}

// Prediction for one query from its ranked neighbours into out[0..m).
void knn_combine(const std::vector<Neighbour>& nb, const Tensor& train_y, const KnnParams& p,
                 double* out) {
  const std::size_t m = train_y.dim(1);
  std::fill(out, out + m, 0.0);
  const std::size_t k = p.k;
  if (p.weighting == KnnWeighting::kDistance) {
    std::size_t exact = 0;
    for (std::size_t r = 0; r < k; ++r) exact += nb[r].dist == 0.0;
    if (exact > 0) {
      for (std::size_t r = 0; r < k; ++r) {
        if (nb[r].dist != 0.0) continue;
        const double* y = train_y.ptr() + nb[r].index * m;
        for (std::size_t c = 0; c < m; ++c) out[c] += y[c];
      }
      for (std::size_t c = 0; c < m; ++c) out[c] /= static_cast<double>(exact);
      return;
    }
    double wsum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      const double w = 1.0 / nb[r].dist;
      wsum += w;
      const double* y = train_y.ptr() + nb[r].index * m;
      for (std::size_t c = 0; c < m; ++c) out[c] += w * y[c];
    }
    for (std::size_t c = 0; c < m; ++c) out[c] /= wsum;
    return;
  }
  for (std::size_t r = 0; r < k; ++r) {
    const double* y = train_y.ptr() + nb[r].index * m;
    for (std::size_t c = 0; c < m; ++c) out[c] += y[c];
  }
  for (std::size_t c = 0; c < m; ++c) out[c] /= static_cast<double>(k);
}

void check_xy(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2) throw ShapeError("features and targets must be matrices");
  if (x.dim(0) != y.dim(0)) {
    throw ShapeError("feature rows " + std::to_string(x.dim(0)) + " != target rows " +
                     std::to_string(y.dim(0)));
  }
}

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t w = t.dim(1);
  Tensor out({rows.size(), w});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.ptr() + rows[r] * w, w, out.ptr() + r * w);
  }
  return out;
}

// scores[g][c]: validation MSE of grid entry g on target column c averaged
// over folds; +inf where k exceeds some fold's training size.
std::vector<std::vector<double>> cv_scores(const Tensor& x, const Tensor& y,
                                           std::span<const KnnParams> grid, std::size_t folds,
                                           std::uint64_t seed) {
  check_xy(x, y);
  if (grid.empty()) throw InputError("grid must not be empty");
  if (folds < 2) throw InputError("need at least 2 folds");
  const std::size_t n = x.dim(0), m = y.dim(1);
  if (n < folds) {
    throw InputError(std::to_string(n) + " samples are fewer than " + std::to_string(folds) +
                     " folds");
  }
  const auto parts = kfold_partition(n, folds, seed);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> scores(grid.size(), std::vector<double>(m, 0.0));
  std::vector<double> pred(m);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t g = 0; g < folds; ++g) {
      if (g != f) train_rows.insert(train_rows.end(), parts[g].begin(), parts[g].end());
    }
    const Tensor tx = take_rows(x, train_rows);
    const Tensor ty = take_rows(y, train_rows);
    const auto& val = parts[f];
    std::vector<std::vector<double>> sq(grid.size(), std::vector<double>(m, 0.0));
    for (std::size_t v : val) {
      const auto nb = rank_neighbours(tx, x.ptr() + v * x.dim(1));
      for (std::size_t g = 0; g < grid.size(); ++g) {
        if (grid[g].k == 0 || grid[g].k > train_rows.size()) continue;
        knn_combine(nb, ty, grid[g], pred.data());
        for (std::size_t c = 0; c < m; ++c) {
          const double d = pred[c] - y.at(v, c);
          sq[g][c] += d * d;
        }
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const bool valid = grid[g].k >= 1 && grid[g].k <= train_rows.size();
      for (std::size_t c = 0; c < m; ++c) {
        scores[g][c] += valid ? sq[g][c] / static_cast<double>(val.size()) / static_cast<double>(folds)
                              : inf;
      }
    }
  }
  return scores;
}

GridResult pick(std::span<const KnnParams> grid, std::vector<double> scores) {
  GridResult r;
  r.scores = std::move(scores);
  r.best_index = grid.size();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!std::isfinite(r.scores[g])) continue;
    if (r.best_index == grid.size() || r.scores[g] < r.scores[r.best_index]) r.best_index = g;
  }
  if (r.best_index == grid.size()) {
    throw InputError("no grid entry is feasible: every k exceeds the fold training size");
  }
  r.best = grid[r.best_index];
  r.cv_mse = r.scores[r.best_index];
  return r;
}

}  // namespace

ChannelFeatures extract_features(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw InputError("feature extraction needs at least 2 samples, got " + std::to_string(n));
  ChannelFeatures f;
  const double dn = static_cast<double>(n);
  f.mean = std::accumulate(x.begin(), x.end(), 0.0) / dn;
  double ss = 0.0;
  for (double v : x) ss += (v - f.mean) * (v - f.mean);
  f.variance = ss / dn;
  f.std = std::sqrt(f.variance);
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  f.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  f.min = sorted.front();
  f.max = sorted.back();
  f.range = f.max - f.min;
  f.energy = spectral_energy(x);
  f.power = f.energy / dn;
  return f;
}

Tensor feature_matrix(const EventDataset& ds) {
  const std::size_t n = ds.nodes, t = ds.samples, c = ds.channels;
  const std::size_t width = n * c * kNumFeatures;
  Tensor out({ds.events, width});
#pragma omp parallel for schedule(static)
  for (std::size_t e = 0; e < ds.events; ++e) {
    std::vector<double> trace(t);
    const float* base = ds.x.data() + e * n * t * c;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t k = 0; k < t; ++k) trace[k] = base[(i * t + k) * c + ch];
        const auto v = extract_features(trace).values();
        std::copy(v.begin(), v.end(), out.ptr() + e * width + (i * c + ch) * kNumFeatures);
      }
    }
  }
  return out;
}

std::vector<std::string> feature_columns(const StationSet& stations, std::size_t channels) {
  std::vector<std::string> cols;
  for (const Station& s : stations.stations()) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (const char* f : kFeatureNames) {
        cols.push_back(s.id + "_" + std::to_string(ch) + "_" + f);
      }
    }
  }
  return cols;
}

void write_feature_csv(std::ostream& out, const EventDataset& ds) {
  const auto cols = feature_columns(ds.stations, ds.channels);
  out << "event";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  const Tensor f = feature_matrix(ds);
  out.precision(17);
  for (std::size_t e = 0; e < ds.events; ++e) {
    out << e;
    for (std::size_t j = 0; j < cols.size(); ++j) out << ',' << f.at(e, j);
    out << '\n';
  }
}

Tensor target_matrix(const EventDataset& ds) {
  const std::size_t w = kNumTargets * ds.nodes;
  Tensor out({ds.events, w});
  std::transform(ds.y.begin(), ds.y.end(), out.ptr(), [](float v) { return double(v); });
  return out;
}

Standardizer Standardizer::fit(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw InputError("standardizer needs a non-empty matrix");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m);
    v /= static_cast<double>(n);
    s.mean[j] = m;
    s.scale[j] = v > 0.0 ? 1.0 / std::sqrt(v) : 0.0;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != mean.size()) throw ShapeError("standardizer width mismatch");
  Tensor out = x;
  const std::size_t d = mean.size();
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = (x.at(i, j) - mean[j]) * scale[j];
  }
  return out;
}

const char* knn_weighting_name(KnnWeighting w) {
  return w == KnnWeighting::kUniform ? "uniform" : "distance";
}

std::vector<KnnParams> default_knn_grid() {
  std::vector<KnnParams> grid;
  for (KnnWeighting w : {KnnWeighting::kUniform, KnnWeighting::kDistance}) {
    for (std::size_t k = 1; k <= 20; ++k) grid.push_back({k, w});
  }
  return grid;
}

Tensor knn_fit_predict(const Tensor& train_x, const Tensor& train_y, const Tensor& test_x,
                       const KnnParams& params) {
  check_xy(train_x, train_y);
  const std::size_t n = train_x.dim(0);
  if (n == 0) throw InputError("KNN training set is empty");
  if (params.k < 1 || params.k > n) {
    throw InputError("k=" + std::to_string(params.k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  if (test_x.rank() != 2 || test_x.dim(1) != train_x.dim(1)) {
    throw ShapeError("test features must be [q," + std::to_string(train_x.dim(1)) + "]");
  }
  const std::size_t q = test_x.dim(0), m = train_y.dim(1);
  Tensor out({q, m});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < q; ++i) {
    const auto nb = rank_neighbours(train_x, test_x.ptr() + i * test_x.dim(1));
    knn_combine(nb, train_y, params, out.ptr() + i * m);
  }
  return out;
}

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t folds,
                                                      std::uint64_t seed) {
  if (folds < 1) throw InputError("folds must be >= 1");
  if (n < folds) {
    throw InputError(std::to_string(n) + " samples are fewer than " + std::to_string(folds) +
                     " folds");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> parts(folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t len = n / folds + (f < n % folds ? 1 : 0);
    parts[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

GridResult grid_search_cv(const Tensor& x, const Tensor& y, std::span<const KnnParams> grid,
                          std::size_t folds, std::uint64_t seed) {
  const auto per = cv_scores(x, y, grid, folds, seed);
  std::vector<double> joint(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (double s : per[g]) joint[g] += s;
    joint[g] /= static_cast<double>(per[g].size());
  }
  return pick(grid, std::move(joint));
}

std::vector<GridResult> grid_search_cv_per_target(const Tensor& x, const Tensor& y,
                                                  std::span<const KnnParams> grid,
                                                  std::size_t folds, std::uint64_t seed) {
  const auto per = cv_scores(x, y, grid, folds, seed);
  const std::size_t m = y.dim(1);
  std::vector<GridResult> out;
  out.reserve(m);
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<double> col(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) col[g] = per[g][c];
    out.push_back(pick(grid, std::move(col)));
  }
  return out;
}

KnnBaseline KnnBaseline::fit(const Tensor& train_x, const Tensor& train_y,
                             std::span<const KnnParams> grid, std::size_t folds,
                             std::uint64_t seed) {
  check_xy(train_x, train_y);
  KnnBaseline b;
  b.scaler_ = Standardizer::fit(train_x);
  b.train_x_ = b.scaler_.apply(train_x);
  b.train_y_ = train_y;
  b.selections_ = grid_search_cv_per_target(b.train_x_, train_y, grid, folds, seed);
  return b;
}

Tensor KnnBaseline::predict(const Tensor& test_x) const {
  const Tensor q = scaler_.apply(test_x);
  const std::size_t m = train_y_.dim(1);
  Tensor out({q.dim(0), m});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < q.dim(0); ++i) {
    const auto nb = rank_neighbours(train_x_, q.ptr() + i * q.dim(1));
    std::vector<double> pred(m);
    for (std::size_t c = 0; c < m; ++c) {
      knn_combine(nb, train_y_, selections_[c].best, pred.data());
      out.at(i, c) = pred[c];
    }
  }
  return out;
}

MeanPredictor MeanPredictor::fit(const Tensor& train_y) {
  if (train_y.rank() != 2 || train_y.dim(0) == 0) {
    throw InputError("mean predictor needs a non-empty target matrix");
  }
  MeanPredictor p;
  const std::size_t n = train_y.dim(0), m = train_y.dim(1);
  p.means_.assign(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) p.means_[c] += train_y.at(i, c);
  }
  for (double& v : p.means_) v /= static_cast<double>(n);
  return p;
}

Tensor MeanPredictor::predict(std::size_t rows) const {
  Tensor out({rows, means_.size()});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(means_.begin(), means_.end(), out.ptr() + i * means_.size());
  }
  return out;
}

}  // namespace tiser
