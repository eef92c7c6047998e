#pragma once

#include <stdexcept>
#include <string>

namespace flowguard {

// Base of every error the library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
struct ShapeError : Error {
  using Error::Error;
};

// A precondition of the called operation was violated.
struct ContractError : Error {
  using Error::Error;
};

// CSV header does not match the expected column list.
struct SchemaError : Error {
  using Error::Error;
};

// An input file could not be opened or read.
struct ReadError : Error {
  using Error::Error;
};

// A data row could not be parsed. Carries the 1-based file line.
struct RowError : Error {
  RowError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A required label class is absent from the data.
struct MissingClassError : ContractError {
  using ContractError::ContractError;
};

// Generator or run configuration is infeasible.
struct ConfigError : Error {
  using Error::Error;
};

// A dataset cannot be split as requested.
struct SplitError : Error {
  using Error::Error;
};

// Training produced a non-finite loss or parameter.
struct DivergenceError : Error {
  using Error::Error;
};

struct CheckpointVersionError : Error {
  using Error::Error;
};

struct CheckpointParseError : Error {
  using Error::Error;
};

// An output file or directory could not be written.
struct WriteError : Error {
  using Error::Error;
};

// Threshold calibration needs both classes.
struct CalibrationError : Error {
  using Error::Error;
};

}  // namespace flowguard
