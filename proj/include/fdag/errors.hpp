#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdag {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Rank deficiency, loss of positive definiteness and similar failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A vector became (numerically) dependent on the ones before it during
/// Gram-Schmidt. Samplers catch this and redraw.
class CollinearityError : public NumericalError {
 public:
  CollinearityError(std::size_t index, const std::string& what)
      : NumericalError(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class MalformedGraph : public Error {
 public:
  using Error::Error;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

/// Line 0 means the error is not tied to a particular line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace fdag
