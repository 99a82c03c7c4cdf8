#pragma once

#include <stdexcept>
#include <string>

namespace geodistill {

// Bad shapes, out-of-range hyperparameters, incompatible checkpoints.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed by a numeric operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss diverged during training. `dump_path` names the state dump when one was written.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::string dump_path = {})
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const noexcept { return dump_path_; }

 private:
  std::string dump_path_;
};

}  // namespace geodistill
