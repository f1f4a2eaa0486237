#pragma once

#include <stdexcept>
#include <string>

namespace ganproj {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not agree with what an operation expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (nonpositive output size, bad flag, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A loss, gradient or function value became NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed or unsupported file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Checksum mismatch or truncation.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace ganproj
