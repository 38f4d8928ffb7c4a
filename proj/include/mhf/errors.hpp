#pragma once

#include <stdexcept>
#include <string>

namespace mhf {

/// Index or window bound violated.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data violates a precondition (degenerate vector, invalid config, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file. The message names the file and, when known, the line.
class ParseError : public DataError {
 public:
  ParseError(const std::string& file, long line, const std::string& what)
      : DataError(line > 0 ? file + ":" + std::to_string(line) + ": " + what
                           : file + ": " + what) {}
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

/// Checkpoint or other binary file failed its integrity check.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace mhf
