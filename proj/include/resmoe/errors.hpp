#pragma once

#include <stdexcept>
#include <string>

namespace resmoe {

// User-facing errors: bad shapes, bad arguments, bad files. The CLI maps
// these to exit code 1; anything else (logic_error, bad_alloc, ...) is an
// internal error and maps to exit code 2.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

class InvalidCostError : public Error {
public:
  using Error::Error;
};

class EmptyInputError : public Error {
public:
  using Error::Error;
};

class IndexOverflowError : public Error {
public:
  using Error::Error;
};

class RankError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class BadMagicError : public IoError {
public:
  using IoError::IoError;
};

class VersionError : public IoError {
public:
  using IoError::IoError;
};

class TruncatedFileError : public IoError {
public:
  using IoError::IoError;
};

class JsonError : public IoError {
public:
  using IoError::IoError;
};

} // namespace resmoe
