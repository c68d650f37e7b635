#pragma once

// Conditional variance-preserving diffusion in the DDPM discretization.
//
// alpha_t (t = 1..T) are equidistant noise scales; abar_t = prod_{s<=t}(1 - alpha_s).
// The forward marginal is x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps and the
// network predicts eps. Sampling runs Euler-Maruyama on the reverse SDE
//   dX = alpha (X/2 + score) dt + sqrt(alpha) dW,   score = -eps / sqrt(1 - abar_t)
// from t = T down to 1, optionally on a strided grid whose step sizes are the
// summed alphas of the skipped indices. The final update omits the noise
// term. The network sees time t / T.

#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"

#include "clab/errors.hpp"
#include "clab/nets.hpp"
#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

class NoiseSchedule {
   public:
    explicit NoiseSchedule(std::size_t steps = 2000, double alpha_first = 1e-3, double alpha_last = 5e-2);

    std::size_t steps() const { return alpha_.size(); }
    // 1-based indices, t in [1, T].
    double alpha(std::size_t t) const { return alpha_.at(check(t) - 1); }
    double alpha_bar(std::size_t t) const { return alpha_bar_.at(check(t) - 1); }
    const std::vector<double> &alphas() const { return alpha_; }

    // Descending grid T = g_0 > g_1 > ... > g_{n-1} >= 1 of n sampling indices.
    std::vector<std::size_t> sampling_grid(std::size_t n) const;

   private:
    std::size_t check(std::size_t t) const;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

struct ScheduleConfig {
    std::size_t steps = 2000;
    double alpha_first = 1e-3;
    double alpha_last = 5e-2;
};

void to_json(nlohmann::json &j, const ScheduleConfig &c);
void from_json(const nlohmann::json &j, ScheduleConfig &c);

namespace diffusion {

// x_0 and eps congruent, batch in dimension 0; one t per sample.
Tensor forward_noise(const NoiseSchedule &s, const Tensor &x0, std::span<const std::size_t> t, const Tensor &eps);

// Denoising score matching with eps prediction: sum of squared errors divided
// by the batch size. Draws t uniformly from 1..T and eps ~ N(0, I).
Tensor dsm_loss(const ConditionalField &net, const NoiseSchedule &s, const Tensor &x0, const Tensor &y, Rng &rng);

// score(x_t, t) for the whole batch.
using ScoreFn = std::function<Tensor(const Tensor &x, std::size_t t)>;

// Reverse SDE with a supplied score. Each batch item b draws its initial state
// and noise from Rng(split_seed(seed, b)).
Tensor reverse_sample_score(const NoiseSchedule &s, const ScoreFn &score, const Shape &shape, std::uint64_t seed,
                            std::size_t sampling_steps);

// Reverse SDE with an eps-predicting network conditioned on y [B,7,H,W].
Tensor reverse_sample(const NoiseSchedule &s, const ConditionalField &net, const Tensor &y, std::uint64_t seed,
                      std::size_t sampling_steps);

// Exact score of the forward marginal when x_0 ~ N(mu, sigma^2) elementwise.
ScoreFn gaussian_score(const NoiseSchedule &s, double mu, double sigma);

}  // namespace diffusion

}  // namespace clab
