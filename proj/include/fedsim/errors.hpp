#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

/// Base class for all errors raised by the simulator.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension or layout mismatch between matrices, models or weight vectors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A class label outside [0, num_classes).
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; message carries the offending line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A split that cannot satisfy the per-class stratification contract.
class StratificationError : public Error {
 public:
  using Error::Error;
};

/// Violation of an orchestration precondition (empty client, empty view, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Metric computed from degenerate inputs (empty confusion matrix, ...).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedsim
