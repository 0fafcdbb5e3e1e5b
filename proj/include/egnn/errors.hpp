#pragma once

#include <stdexcept>
#include <string>

namespace egnn {

// Bad inputs: malformed files, invalid configs, violated preconditions.
// The CLI maps these to exit code 1; anything else to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what)
      : std::runtime_error(what) {}
};

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace egnn
