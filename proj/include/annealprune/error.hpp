#pragma once

#include <stdexcept>
#include <string>

namespace annealprune {

// Error taxonomy. Everything derives from Error so the CLI can catch one
// type and print a single-line diagnostic.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/layer shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (fractions out of range, lo > hi, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced where finite math was expected.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong object state (missing cache, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (dataset archives, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Pruning schedule asked for more survivors than candidates.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Epoch-end callback called out of order or out of range.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Bad experiment configuration; reported before any training starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace annealprune
