#pragma once

#include <stdexcept>
#include <string>

namespace gramode {

// Base of every error the library throws. Subclasses let callers (CLI, tests)
// distinguish failure classes without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value outside an operation's mathematical domain (e.g. lo > hi for clamp).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed user input: out-of-range node ids, empty series, bad CSV rows.
class InputError : public Error {
 public:
  using Error::Error;
};

// Binary file does not match its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Autodiff misuse: value not recorded on a live tape, mixed tapes.
class GraphError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite state produced while integrating or training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gramode
