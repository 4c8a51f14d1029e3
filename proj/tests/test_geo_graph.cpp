#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "tiser/errors.hpp"
#include "tiser/geo_graph.hpp"

using namespace tiser;
using namespace tiser::testing;

namespace {

constexpr double kPi = std::numbers::pi;

double km_to_deg(double km) { return km / kEarthRadiusKm * 180.0 / kPi; }

// Stations on the equator so pairwise distances are exact differences:
// d(0,1) = 10, d(0,2) = 20, d(1,2) = 30 km.
StationSet line_stations() {
  return StationSet({{"a", {0.0, 0.0}}, {"b", {0.0, -km_to_deg(10)}}, {"c", {0.0, km_to_deg(20)}}});
}

StationSet random_stations(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(40, 45), lon(10, 16);
  std::vector<Station> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({"s" + std::to_string(i), {lat(rng), lon(rng)}});
  return StationSet(std::move(s));
}

// Symmetric random adjacency with zero diagonal; roughly `density` of pairs set.
SensorGraph random_graph(std::size_t n, std::mt19937_64& rng, double density = 0.6) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor a({n, n}), d({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = u(rng) < density ? u(rng) : 0.0;
      a.at(i, j) = a.at(j, i) = w;
      d.at(i, j) = d.at(j, i) = 1.0 + 100 * u(rng);
    }
  return graph_from_adjacency(a, d, 0.0);
}

Tensor kipf_oracle(const Tensor& a) {
  const std::size_t n = a.dim(0);
  Tensor at = a;
  for (std::size_t i = 0; i < n; ++i) at.at(i, i) += 1.0;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += at.at(i, j);
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.at(i, j) = at.at(i, j) / std::sqrt(deg[i] * deg[j]);
  return m;
}

Tensor laplacian_oracle(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<double> inv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a.at(i, j);
    inv[i] = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) l.at(i, j) = (i == j ? 1.0 : 0.0) - inv[i] * a.at(i, j) * inv[j];
  return l;
}

std::set<std::pair<std::size_t, std::size_t>> edge_set(const SensorGraph& g) {
  std::set<std::pair<std::size_t, std::size_t>> s;
  for (const Edge& e : g.edges()) s.insert({e.i, e.j});
  return s;
}

}  // namespace

TEST(Geodesic, IdenticalPointsAreZeroApart) {
  EXPECT_EQ(geodesic_km({42.0, 13.0}, {42.0, 13.0}), 0.0);
}

TEST(Geodesic, QuarterAndHalfCircumference) {
  EXPECT_NEAR(geodesic_km({0, 0}, {0, 90}), 10007.54, 0.01);
  EXPECT_NEAR(geodesic_km({0, 0}, {0, 180}), 20015.09, 0.01);
}

TEST(Geodesic, OutOfRangeCoordinatesThrow) {
  EXPECT_THROW(geodesic_km({91, 0}, {0, 0}), InputError);
  EXPECT_THROW(geodesic_km({0, 0}, {0, -180.5}), InputError);
}

TEST(Geodesic, SymmetryAndTriangleInequality) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 2000; ++i) {
    const GeoPoint a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)}, c{lat(rng), lon(rng)};
    EXPECT_NEAR(geodesic_km(a, b), geodesic_km(b, a), 1e-9);
    EXPECT_LE(geodesic_km(a, c), geodesic_km(a, b) + geodesic_km(b, c) + 1e-9);
    EXPECT_GT(geodesic_km(a, b), 0.0);
  }
}

TEST(StationSet, ValidatesInput) {
  EXPECT_THROW(StationSet({{"a", {0, 0}}}), InputError);
  EXPECT_THROW(StationSet({{"a", {0, 0}}, {"a", {1, 1}}}), InputError);
  EXPECT_THROW(StationSet({{"a", {0, 0}}, {"b", {100, 1}}}), InputError);
}

TEST(StationSet, CsvRoundTrip) {
  std::mt19937_64 rng(2);
  const StationSet s = random_stations(6, rng);
  std::stringstream io;
  s.write_csv(io);
  EXPECT_EQ(StationSet::read_csv(io), s);
  std::stringstream bad("name,lat,lon\nx,1,2\n");
  EXPECT_THROW(StationSet::read_csv(bad), FormatError);
}

TEST(BuildAdjacency, HandComputedWeights) {
  const SensorGraph g = build_adjacency(line_stations(), 0.3);
  EXPECT_NEAR(g.distances_km().at(0, 1), 10.0, 1e-9);
  EXPECT_NEAR(g.distances_km().at(1, 2), 30.0, 1e-9);
  const auto edges = g.edges();
  ASSERT_EQ(edges.size(), 2u);
  EXPECT_EQ(edges[0].i, 0u);
  EXPECT_EQ(edges[0].j, 1u);
  EXPECT_NEAR(edges[0].weight, 1.0, 1e-12);
  EXPECT_EQ(edges[1].j, 2u);
  EXPECT_NEAR(edges[1].weight, 0.5, 1e-9);
  EXPECT_EQ(g.adjacency().at(1, 2), 0.0);
}

TEST(BuildAdjacency, ZeroThresholdDropsOnlyTheFarthestPair) {
  EXPECT_EQ(build_adjacency(line_stations(), 0.0).edges().size(), 2u);
}

TEST(BuildAdjacency, ThresholdOneGivesEmptyGraph) {
  std::mt19937_64 rng(3);
  const SensorGraph g = build_adjacency(random_stations(9, rng), 1.0);
  EXPECT_TRUE(g.edges().empty());
  EXPECT_EQ(graph_stats(g).edge_count, 0u);
  EXPECT_EQ(nlohmann::json::parse(g.to_json())["edges"].size(), 0u);
}

TEST(BuildAdjacency, EqualDistancesAreDegenerate) {
  // Two stations have a single pairwise distance.
  EXPECT_THROW(build_adjacency(StationSet({{"a", {0, 0}}, {"b", {0, 1}}}), 0.1), DegenerateError);
}

TEST(BuildAdjacency, InvariantsOnRandomSets) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const double k = std::uniform_real_distribution<double>(0, 1)(rng);
    const SensorGraph g = build_adjacency(random_stations(8, rng), k);
    const Tensor& a = g.adjacency();
    for (std::size_t i = 0; i < g.n(); ++i) {
      EXPECT_EQ(a.at(i, i), 0.0);
      for (std::size_t j = 0; j < g.n(); ++j) {
        EXPECT_EQ(a.at(i, j), a.at(j, i));
        EXPECT_TRUE(a.at(i, j) == 0.0 || (a.at(i, j) > k && a.at(i, j) <= 1.0));
      }
    }
  }
}

TEST(BuildAdjacency, EdgeSetsShrinkMonotonicallyInK) {
  std::mt19937_64 rng(5);
  const StationSet s = random_stations(15, rng);
  auto prev = edge_set(build_adjacency(s, 0.0));
  for (int step = 1; step <= 20; ++step) {
    const auto cur = edge_set(build_adjacency(s, step / 20.0));
    for (const auto& e : cur) EXPECT_TRUE(prev.count(e));
    prev = cur;
  }
}

TEST(Propagation, LaplacianOfUnitPair) {
  const SensorGraph g = graph_from_adjacency(Tensor::matrix({{0, 1}, {1, 0}}),
                                             Tensor::matrix({{0, 5}, {5, 0}}), 0.0);
  EXPECT_EQ(normalized_laplacian(g).matrix, Tensor::matrix({{1, -1}, {-1, 1}}));
}

TEST(Propagation, IsolatedNodeGetsIdentityRow) {
  const Tensor a = Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 0}});
  const Tensor l = normalized_laplacian(graph_from_adjacency(a, Tensor({3, 3}), 0.0)).matrix;
  EXPECT_EQ(l.at(2, 0), 0.0);
  EXPECT_EQ(l.at(2, 1), 0.0);
  EXPECT_EQ(l.at(2, 2), 1.0);
  EXPECT_EQ(l.at(0, 2), 0.0);
}

TEST(Propagation, LaplacianOfPathMatchesOracle) {
  const Tensor a = Tensor::matrix({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}});
  const Tensor l = normalized_laplacian(graph_from_adjacency(a, Tensor({3, 3}), 0.0)).matrix;
  EXPECT_LT(max_abs_diff(l, laplacian_oracle(a)), 1e-12);
}

TEST(Propagation, KipfSingleNodeAndUnitPair) {
  const SensorGraph pair = graph_from_adjacency(Tensor::matrix({{0, 1}, {1, 0}}), Tensor({2, 2}), 0.0);
  EXPECT_LT(max_abs_diff(kipf_renormalized(pair).matrix, Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})),
            1e-15);
  const SensorGraph single = graph_from_adjacency(Tensor({1, 1}), Tensor({1, 1}), 0.0);
  EXPECT_EQ(kipf_renormalized(single).matrix, Tensor::matrix({{1.0}}));
}

TEST(Propagation, MatchesDenseOraclesOnRandomGraphs) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const SensorGraph g = random_graph(n, rng);
    const Tensor kipf = kipf_renormalized(g).matrix;
    const Tensor lap = normalized_laplacian(g).matrix;
    EXPECT_LT(max_abs_diff(kipf, kipf_oracle(g.adjacency())), 1e-12);
    EXPECT_LT(max_abs_diff(lap, laplacian_oracle(g.adjacency())), 1e-12);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(kipf.at(i, j), kipf.at(j, i));
        EXPECT_EQ(lap.at(i, j), lap.at(j, i));
        EXPECT_GE(kipf.at(i, j), 0.0);
      }
  }
}

TEST(Propagation, LaplacianRowSumsOnUnweightedGraphs) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 6;
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) a.at(i, j) = a.at(j, i) = (rng() % 2) ? 1.0 : 0.0;
    const Tensor l = normalized_laplacian(graph_from_adjacency(a, Tensor({n, n}), 0.0)).matrix;
    for (std::size_t i = 0; i < n; ++i) {
      double di = 0.0, row = 0.0, want = 1.0;
      for (std::size_t j = 0; j < n; ++j) {
        di += a.at(i, j);
        row += l.at(i, j);
      }
      if (di == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        double dj = 0.0;
        for (std::size_t q = 0; q < n; ++q) dj += a.at(j, q);
        if (a.at(i, j) != 0.0) want -= a.at(i, j) / std::sqrt(di * dj);
      }
      EXPECT_NEAR(row, want, 1e-12);
    }
  }
}

TEST(GraphStats, CompleteGraphAndPath) {
  Tensor full({4, 4}, 1.0);
  for (std::size_t i = 0; i < 4; ++i) full.at(i, i) = 0.0;
  EXPECT_DOUBLE_EQ(graph_stats(graph_from_adjacency(full, Tensor({4, 4}, 3.0), 0.0)).avg_degree_centrality,
                   1.0);
  const Tensor path = Tensor::matrix({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}});
  const Tensor dist = Tensor::matrix({{0, 4, 9}, {4, 0, 7}, {9, 7, 0}});
  const GraphStats s = graph_stats(graph_from_adjacency(path, dist, 0.0));
  EXPECT_EQ(s.edge_count, 2u);
  EXPECT_NEAR(s.avg_degree_centrality, 0.6667, 1e-4);
  EXPECT_EQ(s.cutoff_km, 7.0);
}

TEST(GraphStats, CutoffIsLargestRetainedDistance) {
  const GraphStats s = graph_stats(build_adjacency(line_stations(), 0.3));
  EXPECT_NEAR(s.cutoff_km, 20.0, 1e-9);
}

TEST(GraphJson, ExportsEdges) {
  const auto j = nlohmann::json::parse(build_adjacency(line_stations(), 0.3).to_json());
  EXPECT_EQ(j["n"], 3);
  EXPECT_EQ(j["k"], 0.3);
  ASSERT_EQ(j["edges"].size(), 2u);
  EXPECT_EQ(j["edges"][0]["i"], 0);
  EXPECT_NEAR(j["edges"][0]["dist_km"].get<double>(), 10.0, 1e-9);
}
