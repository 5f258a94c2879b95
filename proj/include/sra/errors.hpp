#pragma once

#include <stdexcept>
#include <string>

namespace sra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached an activation, gradient or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class OverlapError : public SpecError {
 public:
  using SpecError::SpecError;
};

class PatchError : public Error {
 public:
  using Error::Error;
};

class ArchHashMismatchError : public PatchError {
 public:
  using PatchError::PatchError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sra
