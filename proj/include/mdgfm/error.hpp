#pragma once

#include <stdexcept>
#include <string>

namespace mdgfm {

// Base of every error the library throws. The CLI maps ConfigError to exit
// code 2 and DataError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input files that cannot be read, parsed, or that reference invalid nodes.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class BoundsError : public DataError {
 public:
  using DataError::DataError;
};

class LoadError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Few-shot task construction failed (no class has enough labelled nodes).
class TaskError : public Error {
 public:
  using Error::Error;
};

// Training diverged; the message carries the epoch, graph, and batch.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdgfm
