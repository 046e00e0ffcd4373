#pragma once

#include <stdexcept>
#include <string>

namespace sattn {

// Bad user input: malformed config, invalid flag combination, bad dimensions.
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// A file could not be parsed. Message carries the 1-based line number where known.
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A configured resource budget (enumeration size, scalar bit length) would be exceeded.
struct budget_error : std::runtime_error {
    explicit budget_error(const std::string& msg) : std::runtime_error(msg) {}
};

// An internal consistency check of the shift schedule failed. The message names the layer.
struct schedule_error : std::runtime_error {
    explicit schedule_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted (non-finite loss or similar).
struct training_error : std::runtime_error {
    explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sattn
