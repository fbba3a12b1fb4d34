#pragma once

#include <stdexcept>
#include <string>

namespace ocn {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shape or layout mismatch; message names the operation and both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid or inconsistent run configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite values, CFL violations, degenerate statistics.
struct NumericError : Error {
    using Error::Error;
};

/// File format or I/O failure.
struct IoError : Error {
    using Error::Error;
};

} // namespace ocn
