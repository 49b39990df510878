#pragma once

#include <stdexcept>
#include <string>

namespace apv {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers can catch broadly or by kind.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error("usage error: " + m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("i/o error: " + m) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error("format error: " + m) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& m) : std::runtime_error("validation error: " + m) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};

struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& m) : std::runtime_error("sampling error: " + m) {}
};

struct TransferError : std::runtime_error {
  explicit TransferError(const std::string& m) : std::runtime_error("transfer error: " + m) {}
};

}  // namespace apv
