#pragma once

#include <stdexcept>
#include <string>

namespace biskip {

// Base for every error the library raises. Callers that only care about
// "something went wrong in biskip" can catch this one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid model/loss/training configuration.
class SpecError : public Error {
public:
    using Error::Error;
};

// A scalar argument outside its domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Spatial dimensions that the operation cannot accept.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Two operands that must share a shape do not.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

// Violated precondition on mutable state (e.g. self-paced update without losses).
class StateError : public Error {
public:
    using Error::Error;
};

// Dataset, image file or checkpoint could not be read or is inconsistent.
class DataError : public Error {
public:
    using Error::Error;
};

// Checkpoint file missing, truncated or inconsistent with its header.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// A loss or gradient became NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace biskip
