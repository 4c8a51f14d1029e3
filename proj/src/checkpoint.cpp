#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tiser/errors.hpp"
#include "tiser/model.hpp"

namespace tiser {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', 'G'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T), what);
    return v;
  }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what +
                           " at offset " + std::to_string(offset_));
    }
    offset_ += n;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Model& m) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  nlohmann::json header;
  header["kind"] = model_kind_name(m.kind());
  header["n_nodes"] = m.n_nodes();
  header["config"] = m.config();
  const std::string blob = header.dump();
  put<std::uint64_t>(out, blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const auto params = m.parameters();
  put<std::uint64_t>(out, params.size());
  for (const ConstParamRef& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& s = p.value->shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value->ptr()),
              static_cast<std::streamsize>(p.value->size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint");
}

Model read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint magic mismatch at offset 0: expected 'TSRG'");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " at offset 4, expected " +
                       std::to_string(kCheckpointVersion));
  }
  const auto blob_len = r.get<std::uint64_t>("header length");
  if (blob_len > (1u << 24)) {
    throw FormatError("implausible header length at offset 8");
  }
  const std::size_t blob_offset = r.offset();
  std::string blob(blob_len, '\0');
  r.read(blob.data(), blob.size(), "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("checkpoint header is not valid JSON at offset " +
                      std::to_string(blob_offset + e.byte) + ": " + e.what());
  }
  ModelConfig cfg;
  std::size_t n_nodes = 0;
  ModelKind kind{};
  try {
    cfg = header.at("config").get<ModelConfig>();
    n_nodes = header.at("n_nodes").get<std::size_t>();
    kind = model_kind_from_name(header.at("kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  Model m = build_model(kind, cfg, n_nodes, 0);
  auto params = m.parameters();
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != params.size()) {
    throw ConsistencyError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                           std::to_string(params.size()));
  }
  for (ParamRef& p : params) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    std::string name(name_len, '\0');
    r.read(name.data(), name.size(), "parameter name");
    if (name != p.name) {
      throw ConsistencyError("checkpoint parameter '" + name + "' where '" + p.name +
                             "' was expected");
    }
    const auto rank = r.get<std::uint32_t>("parameter rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("parameter dims");
    if (shape != p.value->shape()) {
      throw ConsistencyError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                             ", expected " + shape_str(p.value->shape()));
    }
    r.read(reinterpret_cast<char*>(p.value->ptr()), p.value->size() * sizeof(double),
           "parameter values");
  }
  return m;
}

void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, m);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace tiser
