#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tiser/datakit.hpp"
#include "tiser/tensor.hpp"

namespace tiser {

inline constexpr std::size_t kNumFeatures = 9;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {
    "mean", "std", "var", "median", "min", "max", "range", "energy", "power"};

// Population statistics plus spectral energy sum |FFT(x)|^2 and power E / T.
struct ChannelFeatures {
  double mean = 0, std = 0, variance = 0, median = 0, min = 0, max = 0, range = 0, energy = 0,
         power = 0;

  std::array<double, kNumFeatures> values() const {
    return {mean, std, variance, median, min, max, range, energy, power};
  }
};

ChannelFeatures extract_features(std::span<const double> x);

// One row per event, N*C*9 columns ordered station, channel, feature.
Tensor feature_matrix(const EventDataset& ds);
std::vector<std::string> feature_columns(const StationSet& stations, std::size_t channels);
void write_feature_csv(std::ostream& out, const EventDataset& ds);

// One row per event, 5*N columns (row-major [5,N] flattened).
Tensor target_matrix(const EventDataset& ds);

// Column-wise z-score fitted on training rows; zero-variance columns map to 0.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Tensor& x);
  Tensor apply(const Tensor& x) const;
};

enum class KnnWeighting { kUniform, kDistance };
const char* knn_weighting_name(KnnWeighting w);

struct KnnParams {
  std::size_t k = 5;
  KnnWeighting weighting = KnnWeighting::kUniform;

  bool operator==(const KnnParams&) const = default;
};

// k from 1 to 20 crossed with {uniform, distance}, uniform first.
std::vector<KnnParams> default_knn_grid();

// Euclidean neighbours, ties in distance broken by lower training index.
// train_x [n,d], train_y [n,m], test_x [q,d] -> [q,m].
Tensor knn_fit_predict(const Tensor& train_x, const Tensor& train_y, const Tensor& test_x,
                       const KnnParams& params);

// Shuffled partition of 0..n-1 into `folds` parts whose sizes differ by at most 1.
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t folds,
                                                      std::uint64_t seed);

struct GridResult {
  std::size_t best_index = 0;
  KnnParams best;
  double cv_mse = 0.0;
  std::vector<double> scores;  // mean validation MSE per grid entry
};

// Scores each grid entry by validation MSE averaged over folds and all target
// columns. The lowest score wins; ties go to the earlier grid entry.
GridResult grid_search_cv(const Tensor& x, const Tensor& y, std::span<const KnnParams> grid,
                          std::size_t folds = 5, std::uint64_t seed = 0);

// Same search run independently for every target column.
std::vector<GridResult> grid_search_cv_per_target(const Tensor& x, const Tensor& y,
                                                  std::span<const KnnParams> grid,
                                                  std::size_t folds = 5, std::uint64_t seed = 0);

// Feature standardisation plus a per-target KNN chosen by grid search.
class KnnBaseline {
 public:
  static KnnBaseline fit(const Tensor& train_x, const Tensor& train_y,
                         std::span<const KnnParams> grid, std::size_t folds, std::uint64_t seed);
  Tensor predict(const Tensor& test_x) const;
  const std::vector<GridResult>& selections() const { return selections_; }

 private:
  Standardizer scaler_;
  Tensor train_x_;
  Tensor train_y_;
  std::vector<GridResult> selections_;
};

// Predicts the per-column training mean.
class MeanPredictor {
 public:
  static MeanPredictor fit(const Tensor& train_y);
  Tensor predict(std::size_t rows) const;
  const std::vector<double>& means() const { return means_; }

 private:
  std::vector<double> means_;
};

}  // namespace tiser
