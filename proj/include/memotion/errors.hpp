// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace memotion {

// Every failure the library reports derives from Error so callers (the CLI in
// particular) can map families of failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the call itself was violated (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied values: labels out of range, too few samples, ...
class InputError : public Error {
 public:
  using Error::Error;
};

/// A text file (labels, config, vocabulary) could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file exists but is not in the expected format (bad magic, missing column).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An image file could not be decoded (unreadable, truncated).
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Stored data failed its integrity check.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not match the model it is loaded into, or is damaged.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace memotion
