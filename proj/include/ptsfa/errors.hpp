#pragma once

#include <stdexcept>
#include <string>

namespace ptsfa {

// Shape disagreement between tensors.
struct DimError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Index or argument outside its documented range.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Non-finite value where a finite one is required; message names the tensor.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data; message carries the byte offset.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration (unknown key, mismatched datasets, broken curriculum).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A shift emptied a point cloud.
struct DegenerateSampleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller violated a stated precondition (empty batch, M < 2, ...).
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem failure (missing checkpoint, unwritable directory).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ptsfa
