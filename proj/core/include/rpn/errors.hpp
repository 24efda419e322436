#pragma once

#include <stdexcept>
#include <string>

namespace rpn {

// Thrown when a matrix handed to a factorization is not symmetric positive
// definite (a Cholesky pivot falls at or below the pivot tolerance).
class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error(what) {}
};

// Thrown by data-loading code on malformed input files; carries enough
// context (path, row, column) in the message to locate the offending cell.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an optimization run produces a non-finite or absurdly large
// loss and is aborted rather than silently continued.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace rpn
