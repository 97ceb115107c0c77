#ifndef CDNZ_ERRORS_H_
#define CDNZ_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cdnz {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Contract violations on arguments other than shapes (labels, configs passed in code).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, int64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
  int64_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  int64_t offset_;
};

class FileNotFound : public Error {
 public:
  using Error::Error;
};

// Experiment config with unknown keys or unparsable values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint metadata incompatible with the requested use.
class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

// A training gate (e.g. head pretraining target) was not met.
class TrainingFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace cdnz

#endif  // CDNZ_ERRORS_H_
