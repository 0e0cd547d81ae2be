#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hotcalib {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  NonFiniteCost,
  NumericalUnderflow,
  InstanceTooLarge,
  ParseError,
  EmptyFile,
  IoError,
  SchemaMismatch,
  CovarianceUndefined,
  CovarianceNotPD,
  NegativeInput,
  LogOfNonPositive,
  InsufficientClasses,
  NonFiniteInput,
  ZeroVector,
  NotEnoughClasses,
  NotEnoughSamples,
};

std::string_view to_string(ErrorKind kind);

// Numerical failures map to CLI exit code 1, everything else to 2.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hotcalib
