#pragma once

#include <stdexcept>
#include <string>

namespace fedlora {

// Error taxonomy, mapped to CLI exit codes in tools/: usage=1, config=2,
// data=3, anything else=4.

// Invalid configuration (bad strategy name, out-of-range hyperparameter,
// unknown config key, invalid rank).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or unusable input data (CSV parse failures, empty batches,
// missing group ids).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A partition could not be constructed (too few samples, min-per-client
// unattainable within the retry budget).
struct PartitionError : DataError {
    explicit PartitionError(const std::string& what) : DataError(what) {}
};

// Structural misuse: incompatible tensor shapes, mismatched dimensions.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace fedlora
