#pragma once

#include <stdexcept>
#include <string>

namespace voxnas {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: usage problems are handled by the flag parser, ShapeError /
// ArgumentError / FormatError / IoError / ConfigError exit with 2, and
// NumericError (non-finite loss, diverged run) exits with 3.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& what) : std::runtime_error(what) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace voxnas
