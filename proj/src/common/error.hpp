#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evseq {

// Root of every exception thrown by the core. The C API maps the concrete
// subclasses onto status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input record; `line` is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Config validation failure carrying a JSON pointer to the offending value.
class ValidationError : public Error {
 public:
  ValidationError(std::string pointer, const std::string& what)
      : Error(pointer + ": " + what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace evseq
