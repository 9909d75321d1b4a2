#pragma once

#include <stdexcept>
#include <string>

namespace gar {

// Malformed input file (bad JSON line, wrong joint count, bad CSV row...).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or Inf produced by a numeric operation.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A referenced input file does not exist or cannot be opened.
class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An input's recorded content hash no longer matches the file on disk.
class StaleInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gar
