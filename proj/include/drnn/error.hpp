#pragma once

#include <stdexcept>
#include <string>

namespace drnn {

/// Broad failure category. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  shape,
  numeric,
  config,
  data,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};

/// Raised when a forward or backward pass produces NaN/Inf. Carries the
/// offending time step (0-based) when one applies.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long time_index = -1)
      : Error(ErrorKind::numeric, what), time_index_(time_index) {}

  long time_index() const noexcept { return time_index_; }

 private:
  long time_index_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace drnn
