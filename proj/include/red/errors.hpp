#pragma once

#include <stdexcept>
#include <string>

namespace red {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete kind onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (empty input, missing cache, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a function (sigma <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Dimensions of two operands disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A transform is numerically singular (|U_ii| or |y| below the floor).
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during evaluation or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed user data: ragged CSV rows, unparseable numbers, bad labels.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class LabelDomainError : public DataError {
 public:
  using DataError::DataError;
};

class RaggedRowError : public DataError {
 public:
  using DataError::DataError;
};

class MissingColumnError : public DataError {
 public:
  using DataError::DataError;
};

// Checkpoint problems. Each kind is distinct so callers can tell a stale
// file from a damaged or tampered one.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CorruptFileError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace red
