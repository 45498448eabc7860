#pragma once

#include <stdexcept>
#include <string>

namespace tae {

// Raised when a computation leaves the representable/meaningful range
// (divergence, overflow, zero posterior mass), as opposed to I/O failures.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tae
