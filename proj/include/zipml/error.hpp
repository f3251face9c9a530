#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace zipml {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A value lies outside the domain an operation accepts (e.g. |v_i| > scale_i).
class DomainError : public Error {
  public:
    using Error::Error;
};

/// Invalid argument combination (k <= 0, M < k, degree < 1, ...).
class ArgumentError : public Error {
  public:
    using Error::Error;
};

/// Index out of range (copy index, sample index).
class RangeError : public Error {
  public:
    using Error::Error;
};

/// Statistically invalid use, such as feeding the same quantization draw twice
/// into an estimator that requires independent draws.
class MisuseError : public Error {
  public:
    using Error::Error;
};

/// A polynomial approximation could not reach the requested accuracy.
class InfeasibleError : public Error {
  public:
    using Error::Error;
};

/// Malformed text input. Line and column are 1-based; column 0 means unknown.
class ParseError : public Error {
  public:
    ParseError(std::string const& what, std::size_t line, std::size_t column = 0)
        : Error(what + " (line " + std::to_string(line) +
                (column ? ", column " + std::to_string(column) : std::string()) + ")"),
          line_(line),
          column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

  private:
    std::size_t line_;
    std::size_t column_;
};

/// Binary container failed validation.
class CorruptFileError : public Error {
  public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace zipml
