#pragma once

#include <cstdint>
#include <vector>

#include "clab/tensor.hpp"

namespace clab {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double max_grad_norm = 0.0;  // global L2 clip, 0 = off
};

// Adam with bias correction. Moments are kept per parameter in the order the
// parameters were registered.
class Adam {
   public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    // Applies one update from the populated grads and zeroes them.
    // Throws std::logic_error when a parameter never received a gradient.
    void step();
    void zero_grad();

    std::int64_t steps() const { return step_; }
    const AdamConfig &config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    const std::vector<Tensor> &params() const { return params_; }

   private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig config_;
    std::int64_t step_ = 0;
};

}  // namespace clab
