#pragma once

#include <stdexcept>
#include <string>

namespace feedrec {

/// Base of every error thrown by the library. The CLI maps any of these to a
/// non-zero exit code with the message as diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument to an operation (negative time, empty title, ...).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input error: " + what) {}
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

/// Records that violate a data contract (e.g. click without dwell time).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error("parse error: " + file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("i/o error: " + what) {}
};

/// Checksum or version mismatch in a persisted artifact.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error("integrity error: " + what) {}
};

}  // namespace feedrec
