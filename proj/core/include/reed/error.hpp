#pragma once

#include <stdexcept>
#include <string>

namespace reed {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, shapes, configuration or file contents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate numerical situations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported checkpoint / artifact file. Carries the name of
/// the offending field.
class FormatError : public ConfigError {
 public:
  FormatError(std::string field, const std::string& what)
      : ConfigError("field '" + field + "': " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace reed
