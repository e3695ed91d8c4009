#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lesinr {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes, so new error kinds should derive from one of
// the categories below rather than from Error directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated preconditions and bad configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, aborted optimizer steps.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unknown keys (species ids, raster ids, parameter names).
class LookupError : public Error {
 public:
  using Error::Error;
};

// Malformed files or text records. `offset` is a byte offset for binary
// formats and a 1-based line number for text formats.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit FormatError(const std::string& what) : Error(what) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

// Peer answered, but not with what the wire contract promises.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Transport failures after retries were exhausted.
class NetworkError : public Error {
 public:
  using Error::Error;
};

}  // namespace lesinr
