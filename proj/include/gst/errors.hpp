#pragma once

#include <stdexcept>
#include <string>

namespace gst {

// Error categories map 1:1 onto CLI exit codes (see tools/): io=2,
// config=3, data=4, missing=5.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingError : std::runtime_error {
    explicit MissingError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace gst
