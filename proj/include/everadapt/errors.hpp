#pragma once

#include <stdexcept>
#include <string>

namespace everadapt {

// Error taxonomy. The CLI maps config_error -> exit 2, data_error (missing
// artifacts) -> exit 3, everything else -> exit 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct dimension_error : error {
    using error::error;
};

// Bad argument values: probabilities out of range, labels out of range,
// empty sets where at least one element is required.
struct value_error : error {
    using error::error;
};

// Lifecycle / call-order violations (backward on a non-scalar, uninitialized
// running statistics, metrics on an incomplete result matrix).
struct state_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

// Missing or malformed datasets and artifacts.
struct data_error : error {
    using error::error;
};

// File parse failures (reported with byte offsets where known).
struct format_error : error {
    using error::error;
};

} // namespace everadapt
