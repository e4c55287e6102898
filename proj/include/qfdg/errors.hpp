#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qfdg {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOrder : public Error {
 public:
  explicit UnsupportedOrder(int k)
      : Error("unsupported polynomial order " + std::to_string(k) +
              " (supported: 0..3)") {}
};

/// A sum would need two distinct square-free radicands in one coefficient.
class IncompatibleRoots : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class SizeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateElement : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConnectivityError : public Error {
 public:
  using Error::Error;
};

/// Total depth fell below the admissible minimum.
class DryState : public Error {
 public:
  using Error::Error;
};

class SingularProjection : public Error {
 public:
  using Error::Error;
};

class NonFiniteState : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qfdg
