#pragma once
#include <stdexcept>
#include <string>

namespace mdp {

// Exit-code mapping: ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

// API misuse (backward before forward, shape mismatch inside the engine).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& m) : std::logic_error(m) {}
};

} // namespace mdp
