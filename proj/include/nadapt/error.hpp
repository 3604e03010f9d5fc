#pragma once

#include <stdexcept>
#include <string>

namespace nadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong tensor shape, channel count or spatial size.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain argument (negative sigma, t out of range, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. The CLI maps this to exit code 3.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training aborted because the losses stayed non-finite. Exit code 2.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

enum class IoErrc {
  missing_file,
  unsupported_format,
  unsupported_bit_depth,
  read_failed,
  write_failed,
  empty_directory,
};

class IoError : public Error {
 public:
  IoError(IoErrc code, const std::string& what) : Error(what), code_(code) {}
  IoErrc code() const noexcept { return code_; }

 private:
  IoErrc code_;
};

}  // namespace nadapt
