#pragma once

#include <stdexcept>
#include <string>

namespace biometry {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument violated a documented precondition (out-of-bounds point,
/// mismatched shapes, non-positive scale, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

/// Experiment configuration is malformed or references missing inputs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A required input is unavailable (e.g. no pixel scale from any source).
class MissingPrerequisiteError : public Error {
public:
    using Error::Error;
};

} // namespace biometry
