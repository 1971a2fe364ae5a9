#pragma once

#include <stdexcept>
#include <string>

namespace escrl {

// Base of every error raised by the toolkit. Subclasses name the failure class
// so callers (notably the CLI) can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Two inputs disagree on length or shape.
class ArityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long long step() const noexcept { return step_; }

 private:
  long long step_;
};

}  // namespace escrl
