#pragma once

#include <stdexcept>

namespace evsync {

// Error taxonomy mirrored by the CLI exit codes:
// validation -> 1, computation -> 2, io -> 3.

// Violated precondition, malformed input data, or invalid configuration.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerically or geometrically impossible request on otherwise valid input
// (degeneracy, cheirality failure, insufficient overlap, non-convergence).
struct ComputationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failures: missing paths, unreadable or unwritable files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace evsync
