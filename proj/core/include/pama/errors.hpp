#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pama {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (distance bucket, polar bin, class id) fell outside its table.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates a precondition (duplicate coordinates, too few patches, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Finite-difference checker or optimizer saw a NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed bag or checkpoint file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// The message without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::uint64_t offset_;
};

/// Checkpoint hyperparameters disagree with the requested configuration.
class HyperparameterMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pama
