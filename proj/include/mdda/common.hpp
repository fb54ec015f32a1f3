#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mdda {

// Error taxonomy: every failure surfaces as one of these so callers (and the
// CLI) can map causes to exit codes and messages.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension mismatch between tensors/operands.
struct DimError : Error {
    explicit DimError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Invalid configuration (model config, degradation spec, run config).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// File I/O and format problems.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

// Non-finite values produced by an op, rejected optimizer steps, etc.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Library-wide thread count. 0 = leave the OpenMP default alone.
// All kernels are written so results do not depend on the thread count.
void set_threads(int n);
int effective_threads();

template <typename T>
inline bool is_finite(T v) {
    return std::isfinite(static_cast<double>(v));
}

}  // namespace mdda
