#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tspnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// An object was used in a state that forbids the call (e.g. a consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced while finite checks were enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration. `path` names the offending field, e.g. "encoder.widths".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Malformed file contents. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// A fixed-capacity table (e.g. positional embeddings) is too small.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace tspnet
