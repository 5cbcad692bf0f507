#pragma once

#include <stdexcept>
#include <string>

namespace iofhmm {

// Malformed or inconsistent configuration (hyperparameters, loop settings, config files).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data that violates the model's domain: wrong shapes, non-finite cells, inputs out of range.
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical block failed to produce a usable result.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iofhmm
