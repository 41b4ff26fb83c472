#pragma once

#include <stdexcept>
#include <string>

namespace segloss {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor ranks/axes do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// Values outside an operation's domain (log of nonpositive, non-binary mask, ...).
struct DomainError : Error {
  using Error::Error;
};

// API misuse: a precondition the caller was responsible for.
struct ContractError : Error {
  using Error::Error;
};

// File I/O and format problems.
struct IoError : Error {
  using Error::Error;
};

// NaN/Inf encountered during optimization.
struct NumericError : Error {
  using Error::Error;
};

// Invalid configuration or flags.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace segloss
