#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sepmodel {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid distribution or regression parameters (simplex, rate ordering,
// probability range, dimension mismatches).
struct ParamError : Error {
  using Error::Error;
};

// An argument outside the mathematical domain of an operation
// (negative time, quantile outside (0,1), non-finite input).
struct DomainError : Error {
  using Error::Error;
};

// A density or survival term fell below the log-domain floor while
// evaluating a likelihood.  Carries the offending observation so the
// caller can report or retreat.
struct LogDomainError : Error {
  LogDomainError(const std::string& msg, std::size_t index, bool censored)
      : Error(msg), index(index), censored(censored) {}
  std::size_t index;
  bool censored;
};

// Optimizer failed to reach the convergence criterion on every start.
struct ConvergenceError : Error {
  using Error::Error;
};

// Malformed input file; carries the 1-based line number.
struct ParseError : Error {
  ParseError(const std::string& msg, std::string file, std::size_t line)
      : Error(msg + " (" + file + ":" + std::to_string(line) + ")"),
        file(std::move(file)),
        line(line) {}
  std::string file;
  std::size_t line;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace sepmodel
