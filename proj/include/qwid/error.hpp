// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qwid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid real range (lo > hi, non-finite bounds).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable input value.
class InputError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Shape or axis mismatch between tensors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A kernel or pass was called outside its documented preconditions.
class ContractError : public Error {
 public:
  using Error::Error;
};

class EmptyObserverError : public Error {
 public:
  using Error::Error;
};

/// Graph structure or numeric mode is inconsistent with the requested action.
class GraphError : public Error {
 public:
  using Error::Error;
};

class ConversionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (model files, pixmaps).
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

}  // namespace qwid
