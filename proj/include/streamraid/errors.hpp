#pragma once

#include <stdexcept>
#include <string>

namespace streamraid {

// Root of every error thrown by the library. The CLI maps the subclasses
// onto exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree. The message names the offending operand.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// API misuse: stale or foreign caches, violated preconditions.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration (flags, JSON config, objective/source mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where the math should stay finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class IdxErrorKind { kWrongMagic, kTruncated, kCountMismatch, kUnreadable };

class IdxError : public DataError {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

enum class ModelFileErrorKind { kMalformed, kVersionMismatch, kArchitectureMismatch, kDimensionMismatch, kChecksumMismatch };

class ModelFileError : public DataError {
 public:
  ModelFileError(ModelFileErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  ModelFileErrorKind kind() const noexcept { return kind_; }

 private:
  ModelFileErrorKind kind_;
};

// 0 success, 2 usage/config, 3 data, 4 numeric.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 4;
  return 4;
}

}  // namespace streamraid
