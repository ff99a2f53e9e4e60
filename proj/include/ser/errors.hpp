#pragma once

#include <stdexcept>
#include <string>

namespace ser {

// Exit-code mapping used by the CLI: config/usage -> 1, data -> 2, numeric -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : ConfigError {
    explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ser
