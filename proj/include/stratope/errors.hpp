#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stratope {

/// Importance ratio requested where the evaluation policy has mass but the
/// logging policy has none.
class OverlapError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InvalidPolicyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace stratope
