#pragma once

#include <stdexcept>
#include <string>

namespace mnde {

// Error families map one-to-one onto CLI exit codes (see cli.hpp).

/// Bad shapes, bad indices or invalid arguments to a library call.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or insufficient input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf produced during a computation, or a numerically undefined request.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mnde
