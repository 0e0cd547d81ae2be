#include "hotcalib/error.hpp"

namespace hotcalib {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteCost: return "NonFiniteCost";
    case ErrorKind::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorKind::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::CovarianceUndefined: return "CovarianceUndefined";
    case ErrorKind::CovarianceNotPD: return "CovarianceNotPD";
    case ErrorKind::NegativeInput: return "NegativeInput";
    case ErrorKind::LogOfNonPositive: return "LogOfNonPositive";
    case ErrorKind::InsufficientClasses: return "InsufficientClasses";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::NotEnoughClasses: return "NotEnoughClasses";
    case ErrorKind::NotEnoughSamples: return "NotEnoughSamples";
  }
  return "Unknown";
}

bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteCost:
    case ErrorKind::NumericalUnderflow:
    case ErrorKind::CovarianceNotPD:
    case ErrorKind::NonFiniteInput:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace hotcalib
