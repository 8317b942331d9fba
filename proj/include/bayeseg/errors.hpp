#pragma once

#include <stdexcept>
#include <string>

namespace bayeseg {

/// Label combination excluded by the restriction on (l, z, y).
struct ForbiddenCombination : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Constraint system A*mu <= b has no solution (or no feasible start).
struct InfeasibleConstraints : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File parsing / shape mismatch on external inputs.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bayeseg
