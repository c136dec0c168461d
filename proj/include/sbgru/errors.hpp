#pragma once

#include <stdexcept>
#include <string>

namespace sbgru {

/// Operand extents disagree with what an operation requires.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (log of zero, u at a
/// boundary of (0,1), ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input text (corpus, config) with a location attached.
struct ParseError : std::runtime_error {
  ParseError(const std::string& where, std::size_t line, const std::string& what)
      : std::runtime_error(where + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary container is truncated, has a bad magic, or an unknown version.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sbgru
