#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tiser/datakit.hpp"
#include "tiser/errors.hpp"

namespace tiser {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "dataset I/O assumes a little-endian host");

namespace {

void write_floats(const fs::path& path, const std::vector<float>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "'");
  const std::size_t want = count * sizeof(float);
  if (bytes < want) {
    throw TruncatedError("'" + path.filename().string() + "' is truncated: " +
                         std::to_string(bytes) + " bytes, expected " + std::to_string(want) +
                         " (data ends at offset " + std::to_string(bytes) + ")");
  }
  if (bytes > want) {
    throw ConsistencyError("'" + path.filename().string() + "' holds " + std::to_string(bytes) +
                           " bytes but the manifest implies " + std::to_string(want));
  }
  std::vector<float> v(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(want));
  if (static_cast<std::size_t>(in.gcount()) != want) {
    throw TruncatedError("short read on '" + path.string() + "' at offset " +
                         std::to_string(in.gcount()));
  }
  return v;
}

}  // namespace

void save_dataset(const std::string& dir, const EventDataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  const fs::path root(dir);
  nlohmann::ordered_json m;
  m["version"] = kDatasetVersion;
  m["E"] = ds.events;
  m["N"] = ds.nodes;
  m["T"] = ds.samples;
  m["C"] = ds.channels;
  m["sample_rate_hz"] = ds.sample_rate_hz;
  m["station_file"] = "stations.csv";
  m["byte_order"] = "little-endian";
  m["dtype"] = "f32";
  {
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write manifest in '" + dir + "'");
    out << m.dump(2) << '\n';
  }
  ds.stations.save_csv((root / "stations.csv").string());
  write_floats(root / "X.bin", ds.x);
  write_floats(root / "Y.bin", ds.y);
}

EventDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("no manifest.json in '" + dir + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest.json is not valid JSON at offset " + std::to_string(e.byte) +
                      ": " + e.what());
  }
  EventDataset ds;
  std::string station_file;
  try {
    const int version = m.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw VersionError("dataset version " + std::to_string(version) + ", expected " +
                         std::to_string(kDatasetVersion));
    }
    if (m.at("byte_order").get<std::string>() != "little-endian") {
      throw FormatError("unsupported byte order '" + m.at("byte_order").get<std::string>() + "'");
    }
    if (m.at("dtype").get<std::string>() != "f32") {
      throw FormatError("unsupported dtype '" + m.at("dtype").get<std::string>() + "'");
    }
    ds.events = m.at("E").get<std::size_t>();
    ds.nodes = m.at("N").get<std::size_t>();
    ds.samples = m.at("T").get<std::size_t>();
    ds.channels = m.at("C").get<std::size_t>();
    ds.sample_rate_hz = m.at("sample_rate_hz").get<std::size_t>();
    station_file = m.at("station_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  ds.stations = StationSet::load_csv((root / station_file).string());
  if (ds.stations.size() != ds.nodes) {
    throw ConsistencyError("manifest N=" + std::to_string(ds.nodes) + " but '" + station_file +
                           "' lists " + std::to_string(ds.stations.size()) + " stations");
  }
  ds.x = read_floats(root / "X.bin", ds.events * ds.nodes * ds.samples * ds.channels);
  ds.y = read_floats(root / "Y.bin", ds.events * kNumTargets * ds.nodes);
  ds.validate();
  return ds;
}

}  // namespace tiser
