#pragma once

#include <stdexcept>
#include <string>

namespace segscan {

// Error taxonomy. The CLI maps these to exit codes:
// ConfigError -> 2, IoError -> 3, everything else -> 1.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& msg) : std::runtime_error("parameter error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("configuration error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct OracleError : std::runtime_error {
    explicit OracleError(const std::string& msg) : std::runtime_error("oracle error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("I/O error: " + msg) {}
};

struct InvariantFailure : std::runtime_error {
    explicit InvariantFailure(const std::string& msg) : std::runtime_error("invariant failure: " + msg) {}
};

}  // namespace segscan
