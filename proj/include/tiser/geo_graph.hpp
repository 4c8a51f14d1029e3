#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "tiser/tensor.hpp"

namespace tiser {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

struct Station {
  std::string id;
  GeoPoint location;
};

// Named sensors. Holds the node order used by every graph, dataset column and
// metadata row.
class StationSet {
 public:
  StationSet() = default;
  // Validates ranges, id uniqueness and N >= 2.
  explicit StationSet(std::vector<Station> stations);

  std::size_t size() const noexcept { return stations_.size(); }
  const Station& operator[](std::size_t i) const { return stations_[i]; }
  const std::vector<Station>& stations() const noexcept { return stations_; }

  // Raw coordinates as [N,2] (lat, lon).
  Tensor coordinates() const;

  // CSV with header `id,lat,lon`.
  static StationSet read_csv(std::istream& in);
  static StationSet load_csv(const std::string& path);
  void write_csv(std::ostream& out) const;
  void save_csv(const std::string& path) const;

  bool operator==(const StationSet&) const = default;

 private:
  std::vector<Station> stations_;
};

inline bool operator==(const Station& a, const Station& b) {
  return a.id == b.id && a.location.lat == b.location.lat && a.location.lon == b.location.lon;
}

void validate_point(const GeoPoint& p);

// Great-circle distance on a sphere of radius kEarthRadiusKm (haversine).
double geodesic_km(const GeoPoint& a, const GeoPoint& b);

struct Edge {
  std::size_t i;
  std::size_t j;
  double weight;
  double dist_km;
};

// Weighted undirected station graph. Weights are 1 - minmax(distance) over all
// off-diagonal pairs; an edge survives iff its weight is strictly above k.
class SensorGraph {
 public:
  std::size_t n() const noexcept { return n_; }
  double k() const noexcept { return k_; }
  const Tensor& adjacency() const noexcept { return adjacency_; }
  const Tensor& distances_km() const noexcept { return dist_km_; }
  // Retained edges with i < j, in row-major order.
  std::vector<Edge> edges() const;

  // JSON {n, k, edges:[{i,j,weight,dist_km}]}
  std::string to_json() const;

 private:
  friend SensorGraph build_adjacency(const StationSet& stations, double k);
  friend SensorGraph graph_from_adjacency(Tensor adjacency, Tensor dist_km, double k);

  std::size_t n_ = 0;
  double k_ = 0.0;
  Tensor adjacency_;
  Tensor dist_km_;
};

SensorGraph build_adjacency(const StationSet& stations, double k);
// Wraps an existing symmetric adjacency (tests and synthetic graphs). No
// thresholding is applied; entries must lie in [0,1] with a zero diagonal.
SensorGraph graph_from_adjacency(Tensor adjacency, Tensor dist_km, double k);

enum class PropagationKind { kNormalizedLaplacian, kKipfRenormalized };

const char* propagation_name(PropagationKind kind);
PropagationKind propagation_from_name(const std::string& name);

struct PropagationMatrix {
  PropagationKind kind = PropagationKind::kKipfRenormalized;
  Tensor matrix;  // [N,N]
};

// L = I - D^-1/2 A D^-1/2; isolated nodes use D^-1/2 = 0.
PropagationMatrix normalized_laplacian(const SensorGraph& g);
// D~^-1/2 (A + I) D~^-1/2
PropagationMatrix kipf_renormalized(const SensorGraph& g);
PropagationMatrix propagation(const SensorGraph& g, PropagationKind kind);

struct GraphStats {
  std::size_t edge_count = 0;
  double avg_degree_centrality = 0.0;
  double cutoff_km = 0.0;  // largest retained-edge distance; 0 without edges
};

GraphStats graph_stats(const SensorGraph& g);

}  // namespace tiser
