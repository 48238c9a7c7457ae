#pragma once

#include <stdexcept>
#include <string>

namespace magicnet {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument to an operation (empty input, out-of-range value, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Tensor or sequence dimensions do not match what the operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration struct fails its own invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents (WAV containers, manifests, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorCode {
  bad_magic,
  bad_version,
  truncated,
  bad_metadata,
  duplicate_tensor,
  missing_tensor,
  unknown_tensor,
  shape_mismatch,
};

// Weight-bundle load failure; carries a code so callers can distinguish
// truncation from schema mismatches without parsing the message.
class LoadError : public FormatError {
 public:
  LoadError(LoadErrorCode code, const std::string& what)
      : FormatError(what), code_(code) {}
  LoadErrorCode code() const { return code_; }

 private:
  LoadErrorCode code_;
};

}  // namespace magicnet
