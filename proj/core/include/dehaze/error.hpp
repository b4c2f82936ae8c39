#pragma once

#include <stdexcept>
#include <string>

namespace dehaze {

/// Shape mismatches and out-of-domain arguments.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad recipe, training config, or flag combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// hazy/ and clean/ trees that do not line up, or images too small to crop.
class DatasetIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint or archive was written for a different architecture.
class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf showed up in a loss or parameter.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::string dump_path = {})
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const noexcept { return dump_path_; }

 private:
  std::string dump_path_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dehaze
