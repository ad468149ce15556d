#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace poisonlr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (feature count, vector length, row range).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value. `step()` is the offending iteration.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Malformed input file. `offset()` is the byte (IDX) or line (CSV) position.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Invalid configuration or precondition on user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace poisonlr
