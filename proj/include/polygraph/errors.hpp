#pragma once

#include <stdexcept>
#include <string>

namespace polygraph {

/// Shape or rank of a tensor argument does not match the operation's contract.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration value (widths, counts, flags).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad input data: malformed files, unknown labels, missing clips.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric contract violation: non-finite loss, non-scalar backward root.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace polygraph
