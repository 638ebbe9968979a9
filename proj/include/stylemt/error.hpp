#pragma once

#include <stdexcept>
#include <string>

namespace stylemt {

/// Bad configuration or command-line usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage was invoked before the artifact it consumes exists.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(const std::string& what, std::string producer)
      : std::runtime_error(what), producer_(std::move(producer)) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

/// Non-finite loss or value encountered during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (corpus, table, checkpoint files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stylemt
