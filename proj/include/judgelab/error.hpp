#pragma once

#include <stdexcept>
#include <string>

namespace judgelab {

/// Bad input, configuration, or precondition. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid request (divergence, I/O).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace judgelab
