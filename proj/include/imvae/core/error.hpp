// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace imvae {

// Base for every error raised by the library. The CLI maps NumericalError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Arguments outside their documented domain (bad thresholds, empty inputs...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace imvae
