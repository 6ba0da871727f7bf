#pragma once

#include <stdexcept>
#include <string>

namespace malpurify {

// Tensor shapes disagree with what an operation expects.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A backward pass was attempted with a tape that no longer matches its network.
struct StaleTapeError : std::logic_error {
  using std::logic_error::logic_error;
};

// NaN/Inf reached a place where only finite values are allowed.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed dataset, checkpoint or config file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid argument values (fractions, weights, sizes, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An attack asked for knowledge its threat level does not grant.
struct CapabilityError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace malpurify
