#pragma once

#include <stdexcept>
#include <string>

namespace treeproj {

// Raised when a caller breaks an operation's preconditions (bad shapes,
// out-of-range spans, empty inputs). The CLI maps these to exit code 1.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File system and format problems. The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent checkpoint / corpus files.
class LoadError : public IoError {
 public:
  using IoError::IoError;
};

// NaN/Inf showing up during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void expect(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void expect(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace treeproj
