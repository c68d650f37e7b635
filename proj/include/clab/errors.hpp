#pragma once

#include <stdexcept>

namespace clab {

// Raised when a computation produces NaN or infinity (diverged training,
// exploding sampler state, non-finite ODE right-hand side).
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace clab
