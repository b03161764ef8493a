#ifndef TANLOSS_ERROR_HPP
#define TANLOSS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace tanloss {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unusable input data (vocab files, JSONL records).
class DataError : public Error {
public:
    using Error::Error;
};

/// Binary checkpoint could not be decoded.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Checkpoint layer sizes disagree with the active configuration.
class FingerprintError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Tensor shapes disagree (dimension mismatch between operands).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or infinity where a finite number is required.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace tanloss

#endif
