#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Error taxonomy mirrored by the CLI exit codes:
// config_error -> 2, data_error -> 3, everything else -> 4.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Violations of inter-module contracts (mismatched weight lengths, ...).
class protocol_error : public std::runtime_error {
public:
    explicit protocol_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically undefined results (zero-variance kurtosis, empty rounds, ...).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedsim
