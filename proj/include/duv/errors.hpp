#pragma once

#include <stdexcept>
#include <string>

namespace duv {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation precondition.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Noise schedule failed its invariants.
struct ScheduleError : std::runtime_error {
    explicit ScheduleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace duv
