#ifndef VISAGE_ERRORS_HPP
#define VISAGE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace visage {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shape mismatch. The message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

/// Value outside its allowed domain (bad class index, empty input, ...).
struct DomainError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Malformed text input: filenames, manifests, config files.
struct ParseError : Error {
  using Error::Error;
};

/// Image file that cannot be decoded; carries the path.
struct ImageDecodeError : IoError {
  std::string path;
  ImageDecodeError(std::string p, const std::string& msg)
      : IoError("cannot decode image '" + p + "': " + msg), path(std::move(p)) {}
};

/// Non-finite training loss; carries the epoch where it happened.
struct DivergenceError : Error {
  int epoch;
  explicit DivergenceError(int e)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(e)), epoch(e) {}
};

/// Every grid-search cell failed; nothing to select.
struct SearchExhaustedError : Error {
  using Error::Error;
};

struct CheckpointError : IoError {
  using IoError::IoError;
};
struct BadMagicError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct VersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct TruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace visage

#endif
