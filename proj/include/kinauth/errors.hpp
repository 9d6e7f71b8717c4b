#pragma once

#include <stdexcept>
#include <string>

namespace kinauth {

// Error taxonomy shared by the library and the CLI exit-code contract:
// config/usage errors -> 2, data errors -> 3, numeric failures -> 4.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : DataError {
  explicit ParseError(const std::string& msg) : DataError(msg) {}
};

struct InsufficientDataError : DataError {
  explicit InsufficientDataError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kinauth
