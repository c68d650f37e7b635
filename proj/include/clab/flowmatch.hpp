#pragma once

// Conditional flow matching on the linear path x_t = (1 - t) z + t x with
// target velocity x - z, and ODE sampling from t = 0 to 1 either with a fixed
// grid of Dormand-Prince steps or with adaptive DOPRI5.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clab/errors.hpp"
#include "clab/nets.hpp"
#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

struct OdeProblem {
    // dx = rhs(t, x); dx is preallocated with the size of x.
    std::function<void(double t, std::span<const double> x, std::span<double> dx)> rhs;
    double t0 = 0.0;
    double t1 = 1.0;
    std::vector<double> x0;
    double atol = 1e-5;
    double rtol = 1e-4;
    std::size_t max_steps = 10000;
    double initial_step = 0.0;  // 0 selects automatically

    void validate() const;
};

struct Dopri5Result {
    std::vector<double> x;
    double t = 0.0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evals = 0;
    std::vector<double> error_history;  // scaled error norm of every attempted step
};

class StepLimitError : public std::runtime_error {
   public:
    StepLimitError(const std::string &what, Dopri5Result partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const Dopri5Result &partial() const { return partial_; }

   private:
    Dopri5Result partial_;
};

// Adaptive Dormand-Prince 5(4) with PI step-size control. Throws
// StepLimitError when max_steps attempts are used up and NumericError on a
// non-finite right-hand side.
Dopri5Result dopri5(const OdeProblem &problem);

// n equal steps of the fifth-order Dormand-Prince formula, no error control.
Dopri5Result dopri5_fixed(const OdeProblem &problem, std::size_t n);

enum class OdeMode { Fixed, Adaptive };

std::string to_string(OdeMode m);
OdeMode ode_mode_from_string(const std::string &s);

struct FmSamplerConfig {
    OdeMode mode = OdeMode::Fixed;
    std::size_t steps = 10;  // fixed mode
    double atol = 1e-5;
    double rtol = 1e-4;
    std::size_t max_steps = 10000;
};

struct StepStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evals = 0;
};

struct FmSamples {
    Tensor x;                     // [B, ...] shaped like the field's x_t
    std::vector<StepStats> stats;  // one per sample
};

namespace flowmatch {

// Per-sample t; z, x congruent with batch in dimension 0.
Tensor interpolate(const Tensor &z, const Tensor &x, std::span<const float> t);

// Sum of squared velocity errors divided by the batch size.
Tensor cfm_loss(const ConditionalField &net, const Tensor &x, const Tensor &y, Rng &rng);

// Integrates from z ~ N(0, I) drawn with Rng(split_seed(seed, b)) for item b.
// sample_shape is the shape of x_t for the whole batch; y supplies the
// conditioning with the same batch size.
FmSamples sample(const ConditionalField &net, const Tensor &y, const Shape &sample_shape, std::uint64_t seed,
                 const FmSamplerConfig &config);

std::string stats_csv(const std::vector<StepStats> &stats);

}  // namespace flowmatch

}  // namespace clab
