#pragma once

#include <stdexcept>
#include <string>

namespace duet {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible matrix/tensor dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value (temperature, batch size, layer dims, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Caller violated a documented precondition (non-unit rows, orientation
// mismatch, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid or empty data (empty split, empty score vector, ...).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values or numerically degenerate state.
struct NumericError : Error {
    using Error::Error;
};

// A row to be L2-normalized has norm below the 1e-12 guard.
struct DegenerateEmbeddingError : NumericError {
    using NumericError::NumericError;
};

// Malformed file content (bad magic, truncated payload, size mismatch).
struct FormatError : Error {
    using Error::Error;
};

// Filesystem-level failure (cannot open/read/write).
struct IoError : Error {
    using Error::Error;
};

}  // namespace duet
