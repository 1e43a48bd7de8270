#pragma once

#include <stdexcept>
#include <string>

namespace popalign {

// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated or mismatched artifact files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, degenerate directions, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed (CLI exit code 3); carries the stage name.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(stage) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace popalign
