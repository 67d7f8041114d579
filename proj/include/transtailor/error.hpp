#pragma once

#include <stdexcept>
#include <string>

namespace transtailor {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or model shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition (frozen flags, dangling ids, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable dataset / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The per-iteration pruning budget cannot be met without violating the
// minimum-filters-per-layer guard.
class PruneBudgetError : public Error {
 public:
  using Error::Error;
};

}  // namespace transtailor
