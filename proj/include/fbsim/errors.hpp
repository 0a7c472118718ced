#pragma once

#include <stdexcept>
#include <string>

namespace fbsim {

// Bad user-supplied configuration (unknown keys, out-of-range values,
// inconsistent shapes). CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unreadable dataset/checkpoint/state files. Message carries
// the byte offset where parsing gave up.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or gradient encountered during training. CLI maps this
// to exit code 2.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// An operation was called with inputs that violate its contract
// (e.g. cosine similarity of a zero vector, backward on an eval trace).
struct InvalidArgument : std::runtime_error {
    explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace fbsim
