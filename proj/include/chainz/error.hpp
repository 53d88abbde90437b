#pragma once

#include <stdexcept>
#include <string>

namespace chainz {

// Base for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A value or gradient stream left the finite range.
class NumericOverflowError : public Error {
 public:
  using Error::Error;
};

// tau undefined: every norm is zero.
class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t row, std::size_t column)
      : Error(msg), row_(row), column_(column) {}

  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

// Raised by config/plan parsing. Names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& msg)
      : Error("config key '" + key + "': " + msg), key_(key) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace chainz
