#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcl {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kMissingInput = 3,
  kNumeric = 4,
};

/// Malformed or inconsistent configuration (bad key, invalid value, unknown method).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that violates an operation's preconditions (shape mismatch, empty batch).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Zero-norm vectors or other inputs where a quantity is undefined.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

/// A referenced file or directory does not exist or cannot be decoded.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values.  `index` is the layer level for forward passes and the
/// iteration for training loops; -1 when not applicable.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::int64_t index)
      : std::runtime_error(what), index_(index) {}
  std::int64_t index() const noexcept { return index_; }

 private:
  std::int64_t index_;
};

}  // namespace dcl
