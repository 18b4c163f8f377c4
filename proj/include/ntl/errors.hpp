#pragma once

#include <stdexcept>
#include <string>

namespace ntl {

// Base class for all library errors. CLI maps ConfigError to exit code 2,
// everything else to 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Raised when the joint batch has zero pairwise spread (base bandwidth = 0)
// or fewer than two vectors.
class DegenerateBandwidthError : public Error {
 public:
  using Error::Error;
};

// Raised when the auxiliary domain coincides with the source (e.g. a v=0
// ownership patch), which would make the NTL objective vacuous.
class DegenerateAuxiliaryError : public Error {
 public:
  using Error::Error;
};

class UnknownDatasetError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public Error {
 public:
  using Error::Error;
};

class ChecksumMismatchError : public Error {
 public:
  using Error::Error;
};

class InvalidShiftError : public Error {
 public:
  using Error::Error;
};

// Config / spec validation failures. The message lists every violated field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ntl
