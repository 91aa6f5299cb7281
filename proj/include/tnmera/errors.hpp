#pragma once

#include <stdexcept>
#include <string>

namespace tnmera {

// Bad arguments, malformed files, inadmissible configs. CLI exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf values, failed convergence, gradient-check failure. CLI exit code 2.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace tnmera
