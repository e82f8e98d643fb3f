#pragma once

#include <stdexcept>
#include <string>

namespace xview {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (bad magic, truncated payload, malformed CSV row).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Feature vector with zero norm; aligned distances are undefined.
class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

}  // namespace xview
