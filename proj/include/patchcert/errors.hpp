#pragma once

#include <stdexcept>
#include <string>

namespace patchcert {

// Bad parameters, shapes, or option combinations. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or malformed input data. CLI exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed weight container.
struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

// Operation invoked in the wrong state (e.g. backward without a trace).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation precondition.
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training or optimization produced a non-finite value.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace patchcert
