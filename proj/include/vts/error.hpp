#pragma once

#include <stdexcept>
#include <string>

namespace vts {

/// Base error. `kind()` is a short machine-readable tag used by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

}  // namespace vts
