#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace factgen {

/// Bad user input: malformed files, inconsistent configuration, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record that could not be parsed; carries the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Model checkpoint or vocabulary that cannot be used as requested.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace factgen
