#pragma once

#include <stdexcept>
#include <string>

namespace metastep {

// Error taxonomy shared by all modules. Each class carries a formatted
// message; the type itself is the contract tests match on.

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what, int step = -1)
      : std::runtime_error(what), step_index(step) {}
  int step_index;  // offending inner step, -1 when not applicable
};

struct SpaceMismatch : std::runtime_error {
  explicit SpaceMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct IncompleteTrajectory : std::runtime_error {
  explicit IncompleteTrajectory(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateDenominator : std::runtime_error {
  explicit DegenerateDenominator(const std::string& what) : std::runtime_error(what) {}
};

struct RejectionOverflow : std::runtime_error {
  explicit RejectionOverflow(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigMismatch : std::runtime_error {
  explicit ConfigMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct TaskError : std::runtime_error {
  explicit TaskError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace metastep
