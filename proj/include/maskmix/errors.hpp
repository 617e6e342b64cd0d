#pragma once

#include <stdexcept>
#include <string>

namespace maskmix {

/// Operand shapes or extents do not agree.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor rank is too small for the requested operation.
class RankError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A class label lies outside [0, K).
class LabelError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// Invalid model or run configuration.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Misuse of the gradient tape (reuse after backward, foreign variables).
class TapeError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// A NaN or Inf appeared where finite values are required.
class NonFiniteError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Evaluation protocol cannot be run on the given data.
class ProtocolError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Input record does not follow the segment schema.
class SchemaError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Timestamps fed to the reminder engine went backwards.
class StreamOrderError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace maskmix
