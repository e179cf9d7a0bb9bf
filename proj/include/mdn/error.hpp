#pragma once

#include <stdexcept>
#include <string>

namespace mdn {

/// Invalid or inconsistent configuration (maps to CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not match what an operation expects.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (archives, checkpoints, CSV).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A keyed lookup (subject statistics, configuration name) failed.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mdn
