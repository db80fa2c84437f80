#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Malformed file contents or out-of-range configuration values.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Structurally valid inputs that do not fit together, e.g. a checkpoint whose
// vocabulary size differs from the corpus it is asked to score.
struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss or parameter.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace xmodal
