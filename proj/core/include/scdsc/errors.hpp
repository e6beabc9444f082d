#pragma once

#include <stdexcept>
#include <string>

namespace scdsc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Requested level or index lies outside the available range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Input data cannot support the requested computation (e.g. fewer distinct
/// points than clusters).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Basis initialisation failed; callers are expected to re-seed.
class InitializationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure while reading or writing a file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Failure while decoding an HSIC container.
class LoadError : public IoError {
 public:
  enum class Kind { open, header, truncated, non_finite };

  LoadError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace scdsc
