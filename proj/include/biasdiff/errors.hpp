#pragma once

#include <stdexcept>
#include <string>

namespace biasdiff {

// Configuration or argument problems (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed, missing or degenerate input data (CLI exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint IO and compatibility problems (CLI exit code 4).
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape incompatibility inside the autodiff engine.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Misuse of the gradient tape: backward on a non-scalar, twice, or with no
// active tape.
struct GradientError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace biasdiff
