#pragma once

#include <stdexcept>
#include <string>

namespace resinit {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers can catch broadly or precisely.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes or sizes do not line up (matrix/kernel/state mismatch, zero dims).
struct DimensionError : Error {
    using Error::Error;
};

// A spec object is internally inconsistent (odd width for a looks-linear
// scheme, wrong block kind for an initializer, invalid hyperparameter).
struct SpecError : Error {
    using Error::Error;
};

// Non-finite values or invalid numeric arguments (|rho| > 1, non-PSD
// covariance, division by alpha = 0).
struct NumericError : Error {
    using Error::Error;
};

// Malformed external data (dataset files, JSON configs).
struct FormatError : Error {
    using Error::Error;
};

// Bad command-line or config-file input.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace resinit
