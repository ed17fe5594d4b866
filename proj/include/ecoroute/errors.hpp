#pragma once

#include <stdexcept>
#include <string>

namespace ecoroute {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input content; carries file and line when known.
class ParseError : public Error {
 public:
  using Error::Error;
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what) {}
};

/// Input violates a documented contract or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A referenced entity (link, category, ...) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Too few samples to fit the requested model.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed beyond recoverable jitter.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration of an algorithm parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Metric is undefined for the given inputs (e.g. constant truth).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecoroute
