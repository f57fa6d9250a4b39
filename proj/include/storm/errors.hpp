#pragma once

#include <stdexcept>
#include <string>

namespace storm {

// Error taxonomy shared by the core, the C API (status codes) and the CLI
// (exit codes): user/config errors vs. violated internal invariants.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Wrong-mode usage, e.g. requesting the label-conditioned posterior while
// the model is in inference mode.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace storm
