#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace s2a {

// Error taxonomy mirrored by the C API status codes: validation errors are
// bad inputs or malformed files, numeric errors are non-finite values or
// diverging computations, io errors are filesystem failures.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace s2a
