#pragma once

#include <stdexcept>
#include <string>

namespace idaa {

// Shape/arity violations in tensor ops and model plumbing.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string &msg) : std::runtime_error(msg) {}
};

// Malformed or truncated binary files (ADVW, IDX, ADVI).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string &msg) : std::runtime_error(msg) {}
};

// Invalid argument values (bad labels, empty sets, out-of-range config).
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string &msg) : std::runtime_error(msg) {}
};

}  // namespace idaa
