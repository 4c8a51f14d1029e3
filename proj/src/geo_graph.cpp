#include "tiser/geo_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tiser/errors.hpp"

namespace tiser {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw FormatError("stations csv line " + std::to_string(line) + ": not a number '" + field +
                      "'");
  }
}

}  // namespace

void validate_point(const GeoPoint& p) {
  if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0)) {
    std::ostringstream os;
    os << "coordinate out of range: (" << p.lat << ", " << p.lon << ")";
    throw InputError(os.str());
  }
}

StationSet::StationSet(std::vector<Station> stations) : stations_(std::move(stations)) {
  if (stations_.size() < 2) throw InputError("a station set needs at least 2 stations");
  std::set<std::string> ids;
  for (const Station& s : stations_) {
    validate_point(s.location);
    if (!ids.insert(s.id).second) throw InputError("duplicate station id '" + s.id + "'");
  }
}

Tensor StationSet::coordinates() const {
  Tensor z({size(), 2});
  for (std::size_t i = 0; i < size(); ++i) {
    z.at(i, 0) = stations_[i].location.lat;
    z.at(i, 1) = stations_[i].location.lon;
  }
  return z;
}

StationSet StationSet::read_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<Station> out;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (!header_seen) {
      if (fields != std::vector<std::string>{"id", "lat", "lon"}) {
        throw FormatError("stations csv: expected header 'id,lat,lon'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) {
      throw FormatError("stations csv line " + std::to_string(lineno) + ": expected 3 fields");
    }
    out.push_back({fields[0], {parse_double(fields[1], lineno), parse_double(fields[2], lineno)}});
  }
  if (!header_seen) throw FormatError("stations csv: empty file");
  return StationSet(std::move(out));
}

StationSet StationSet::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stations file '" + path + "'");
  return read_csv(in);
}

void StationSet::write_csv(std::ostream& out) const {
  out << "id,lat,lon\n";
  out.precision(17);
  for (const Station& s : stations_) {
    out << s.id << ',' << s.location.lat << ',' << s.location.lon << '\n';
  }
}

void StationSet::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stations file '" + path + "'");
  write_csv(out);
}

double geodesic_km(const GeoPoint& a, const GeoPoint& b) {
  validate_point(a);
  validate_point(b);
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi1 = a.lat * deg, phi2 = b.lat * deg;
  const double dphi = (b.lat - a.lat) * deg;
  const double dlambda = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
  const double h = std::clamp(s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

std::vector<Edge> SensorGraph::edges() const {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double w = adjacency_.at(i, j);
      if (w > 0.0) out.push_back({i, j, w, dist_km_.at(i, j)});
    }
  }
  return out;
}

std::string SensorGraph::to_json() const {
  nlohmann::json j;
  j["n"] = n_;
  j["k"] = k_;
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : edges()) {
    j["edges"].push_back({{"i", e.i}, {"j", e.j}, {"weight", e.weight}, {"dist_km", e.dist_km}});
  }
  return j.dump(2);
}

SensorGraph build_adjacency(const StationSet& stations, double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw InputError("threshold k must lie in [0,1]");
  const std::size_t n = stations.size();
  if (n < 2) throw InputError("a graph needs at least 2 stations");
  Tensor dist({n, n}, 0.0);
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -dmin;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = geodesic_km(stations[i].location, stations[j].location);
      dist.at(i, j) = dist.at(j, i) = d;
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  }
  if (!(dmax > dmin)) {
    throw DegenerateError("all pairwise station distances are equal; min-max scaling undefined");
  }
  Tensor adj({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = 1.0 - (dist.at(i, j) - dmin) / (dmax - dmin);
      if (w > k) adj.at(i, j) = adj.at(j, i) = w;
    }
  }
  SensorGraph g;
  g.n_ = n;
  g.k_ = k;
  g.adjacency_ = std::move(adj);
  g.dist_km_ = std::move(dist);
  return g;
}

SensorGraph graph_from_adjacency(Tensor adjacency, Tensor dist_km, double k) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("adjacency must be square");
  }
  const std::size_t n = adjacency.dim(0);
  if (dist_km.empty()) dist_km = Tensor({n, n}, 0.0);
  if (dist_km.shape() != adjacency.shape()) throw ShapeError("distance matrix shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency.at(i, i) != 0.0) throw InputError("adjacency diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      const double w = adjacency.at(i, j);
      if (w != adjacency.at(j, i) || w < 0.0 || w > 1.0) {
        throw InputError("adjacency must be symmetric with entries in [0,1]");
      }
    }
  }
  SensorGraph g;
  g.n_ = n;
  g.k_ = k;
  g.adjacency_ = std::move(adjacency);
  g.dist_km_ = std::move(dist_km);
  return g;
}

const char* propagation_name(PropagationKind kind) {
  return kind == PropagationKind::kNormalizedLaplacian ? "normalized_laplacian" : "kipf_renormalized";
}

PropagationKind propagation_from_name(const std::string& name) {
  if (name == "normalized_laplacian") return PropagationKind::kNormalizedLaplacian;
  if (name == "kipf_renormalized") return PropagationKind::kKipfRenormalized;
  throw ConfigError("unknown propagation kind '" + name + "'");
}

PropagationMatrix normalized_laplacian(const SensorGraph& g) {
  const std::size_t n = g.n();
  const Tensor& a = g.adjacency();
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a.at(i, j);
    inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Tensor m({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m.at(i, j) = (i == j ? 1.0 : 0.0) - a.at(i, j) * (inv_sqrt[i] * inv_sqrt[j]);
    }
  }
  return {PropagationKind::kNormalizedLaplacian, std::move(m)};
}

PropagationMatrix kipf_renormalized(const SensorGraph& g) {
  const std::size_t n = g.n();
  const Tensor& a = g.adjacency();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += a.at(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Tensor m({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = a.at(i, j) + (i == j ? 1.0 : 0.0);
      m.at(i, j) = aij * (inv_sqrt[i] * inv_sqrt[j]);
    }
  }
  return {PropagationKind::kKipfRenormalized, std::move(m)};
}

PropagationMatrix propagation(const SensorGraph& g, PropagationKind kind) {
  return kind == PropagationKind::kNormalizedLaplacian ? normalized_laplacian(g) : kipf_renormalized(g);
}

GraphStats graph_stats(const SensorGraph& g) {
  GraphStats s;
  const std::size_t n = g.n();
  std::vector<std::size_t> degree(n, 0);
  for (const Edge& e : g.edges()) {
    ++s.edge_count;
    ++degree[e.i];
    ++degree[e.j];
    s.cutoff_km = std::max(s.cutoff_km, e.dist_km);
  }
  if (n > 1) {
    double total = 0.0;
    for (std::size_t d : degree) total += static_cast<double>(d) / static_cast<double>(n - 1);
    s.avg_degree_centrality = total / static_cast<double>(n);
  }
  return s;
}

}  // namespace tiser
