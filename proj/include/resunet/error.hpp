#pragma once

#include <stdexcept>
#include <string>

namespace resunet {

/// Raised when operand shapes are incompatible. The message names every
/// offending shape.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation is called in a state where it is undefined
/// (backward without a retained forward, batch norm backward in inference
/// mode, ...).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised for malformed external input: files, manifests, configuration.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace resunet
