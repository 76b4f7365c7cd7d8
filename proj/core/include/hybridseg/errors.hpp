#pragma once

#include <stdexcept>
#include <string>

namespace hseg {

// Error taxonomy. Usage/config errors map to CLI exit code 2, everything
// else to exit code 1.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes are inconsistent with the operation.
struct DimensionError : Error {
    using Error::Error;
};

/// A configuration value violates a stated constraint.
struct ConfigError : Error {
    using Error::Error;
};

/// The caller used an API outside its contract.
struct UsageError : Error {
    using Error::Error;
};

/// An input file could not be parsed.
struct ParseError : Error {
    using Error::Error;
};

/// The input uses a format variant outside the supported subset.
struct FormatError : Error {
    using Error::Error;
};

/// A file failed its integrity check (checksum, truncation).
struct IntegrityError : Error {
    using Error::Error;
};

/// Reading or writing a file failed at the OS level.
struct IoError : Error {
    using Error::Error;
};

/// A weight archive could not be applied to a model.
struct LoadError : Error {
    using Error::Error;
};

}  // namespace hseg
