#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace evpose {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid argument or precondition violation.
struct ArgumentError : Error {
  using Error::Error;
};

// Underlying I/O failure (open, read, write).
struct IoError : Error {
  using Error::Error;
};

// Malformed file contents. `offset` is the byte offset of the first bad byte.
struct FormatError : Error {
  FormatError(const std::string& msg, std::uint64_t offset_)
      : Error(msg + " (byte offset " + std::to_string(offset_) + ")"), offset(offset_) {}
  std::uint64_t offset;
};

// Timestamps not non-decreasing. `index` is the offending record.
struct OrderingError : Error {
  OrderingError(const std::string& msg, std::size_t index_)
      : Error(msg + " (record " + std::to_string(index_) + ")"), index(index_) {}
  std::size_t index;
};

// Coordinates outside the declared sensor dimensions.
struct BoundsError : Error {
  BoundsError(const std::string& msg, std::size_t index_)
      : Error(msg + " (record " + std::to_string(index_) + ")"), index(index_) {}
  std::size_t index;
};

// Tensor/layer shape mismatch. `layer` names the offending layer.
struct ShapeError : Error {
  ShapeError(const std::string& msg, const std::string& layer_)
      : Error(msg + " (layer " + layer_ + ")"), layer(layer_) {}
  std::string layer;
};

// Operation invoked in the wrong state (e.g. backward without a cached forward).
struct StateError : Error {
  using Error::Error;
};

// Training failure (non-finite loss or gradient).
struct TrainingError : Error {
  using Error::Error;
};

// No target visible in the frame.
struct NoTargetError : Error {
  using Error::Error;
};

// Fewer valid keypoints than the pose solver needs.
struct InsufficientPointsError : Error {
  using Error::Error;
};

// Bad experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace evpose
