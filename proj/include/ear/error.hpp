// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ear {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied parameter is outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (tensor files, non-finite values).
class InputError : public Error {
 public:
  using Error::Error;
};

/// The request exceeds an explicit capability limit (oracle sizes).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace ear
