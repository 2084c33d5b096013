// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace opal {

/// Base class for recoverable failures reported by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or malformed configuration (manifests, schema files, configs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// User-supplied input that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Instance or mask without any foreground content.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss encountered during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Programming error: shapes or indices that callers are required to get right.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool condition, const char* what) {
  if (!condition) throw ContractViolation(what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace opal
