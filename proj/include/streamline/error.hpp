#pragma once

#include <stdexcept>
#include <string>

namespace streamline {

// Every failure raised by the library derives from Error. The CLI maps the
// subclasses onto process exit codes (see tools/streamline.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes do not line up for an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed or corrupted input data: containers, datasets, JSON files.
class DataError : public Error {
public:
    using Error::Error;
};

// Invalid user configuration (CLI flags, config files, option combinations).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values appeared during training.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace streamline
