#pragma once

#include <stdexcept>
#include <string>

namespace ntklab {

// Shape/axis mismatches between tensors or network pieces.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Memory/parameter-count budget breaches.
struct resource_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Broken internal preconditions (missing lower-order tensors etc).
struct internal_error : std::logic_error {
    using std::logic_error::logic_error;
};

} // namespace ntklab
