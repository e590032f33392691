#pragma once

#include <stdexcept>
#include <string>

namespace trajrec {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid arguments, malformed configuration, violated invariants.
struct ValidationError : Error {
  using Error::Error;
};

// Malformed input files (CSV rows, JSON lines).
struct ParseError : Error {
  using Error::Error;
};

// Well-formed input that cannot be processed (unmatched points,
// unreachable gaps, missing candidates).
struct DataError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace trajrec
