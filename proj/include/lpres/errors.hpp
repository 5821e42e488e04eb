#pragma once

#include <stdexcept>
#include <string>

namespace lpres {

/// Tensor shapes that cannot be combined.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Out-of-domain argument values (labels, step counts, sizes).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation called in a state or combination its contract forbids.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values appeared during training.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int epoch, int stage)
      : std::runtime_error(what), epoch_(epoch), stage_(stage) {}
  int epoch() const { return epoch_; }
  int stage() const { return stage_; }

 private:
  int epoch_;
  int stage_;
};

/// A stage worker failed during a parallel step.
class StageError : public std::runtime_error {
 public:
  StageError(int stage, const std::string& what)
      : std::runtime_error("stage " + std::to_string(stage) + ": " + what), stage_(stage) {}
  int stage() const { return stage_; }

 private:
  int stage_;
};

class IncompleteMetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lpres
