#pragma once

#include <stdexcept>
#include <string>

namespace mmpath {

// Error taxonomy. Callers that can act on the distinction catch the
// concrete type; the CLI maps any Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A value fell outside the domain of an operation (e.g. a point outside
// the tile grid extent).
struct DomainError : Error {
    using Error::Error;
};

// Invalid or infeasible configuration (bad flag set, r not divisible by o).
struct ConfigError : Error {
    using Error::Error;
};

// Two inputs that must describe the same path/world disagree.
struct ConsistencyError : Error {
    using Error::Error;
};

// Unknown node id during embedding lookup.
struct VocabError : Error {
    using Error::Error;
};

// Matrix shape mismatch.
struct DimensionError : Error {
    using Error::Error;
};

// Missing or malformed input file / payload.
struct InputError : Error {
    using Error::Error;
};

} // namespace mmpath
