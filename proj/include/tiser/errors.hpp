#pragma once

#include <stdexcept>
#include <string>

namespace tiser {

// Every error raised by the library derives from Error so callers (and the CLI
// error record) can report a stable machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TISER_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

TISER_DEFINE_ERROR(InputError, "input")
TISER_DEFINE_ERROR(ShapeError, "shape")
TISER_DEFINE_ERROR(ContractError, "contract")
TISER_DEFINE_ERROR(DegenerateError, "degenerate")
TISER_DEFINE_ERROR(FormatError, "format")
TISER_DEFINE_ERROR(VersionError, "version")
TISER_DEFINE_ERROR(TruncatedError, "truncated")
TISER_DEFINE_ERROR(ConsistencyError, "consistency")
TISER_DEFINE_ERROR(ConfigError, "config")
TISER_DEFINE_ERROR(DivergenceError, "divergence")
TISER_DEFINE_ERROR(IoError, "io")

#undef TISER_DEFINE_ERROR

}  // namespace tiser
