#pragma once

#include <stdexcept>
#include <string>

namespace ir2net {

/// Tensor shapes that cannot be combined (channel mismatch, rank mismatch).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Hyperparameters or layer settings that cannot produce a valid computation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Malformed on-disk data (dataset records, checkpoints, images).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward on a non-scalar or off-tape tensor.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ir2net
