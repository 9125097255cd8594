#pragma once

#include <stdexcept>
#include <string>

namespace retforge {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes: data errors -> 1, usage/argument errors -> 2, numeric -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad magic, malformed records, wrong checkpoint kind.
class FormatError : public Error {
public:
    using Error::Error;
};

// Payload length disagrees with the header.
class SizeMismatchError : public Error {
public:
    using Error::Error;
};

// NaN/Inf in stored tensors.
class DataIntegrityError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// A vector that cannot be L2-normalized, a non-finite loss.
class NumericError : public Error {
public:
    using Error::Error;
};

class NormalizationError : public NumericError {
public:
    using NumericError::NumericError;
};

class StateError : public Error {
public:
    using Error::Error;
};

}  // namespace retforge
