#pragma once

// Training and inference for the three model roles on slice pairs.
//
// Pairs are normalized per modality (dataset::normalize) and rescaled at the
// network boundary: the conditioning stack by input_scale (T1 milliseconds
// enter as seconds), the difference target by target_scale = 10 * input_scale
// so that its spread is of the order of the unit Gaussian the generative
// models start from. Predictions are returned in the pair's normalized units.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clab/dataset.hpp"
#include "clab/diffusion.hpp"
#include "clab/flowmatch.hpp"
#include "clab/nets.hpp"
#include "clab/posterior.hpp"

namespace clab {

enum class ModelRole { E2E, DM, FM };

std::string to_string(ModelRole r);
ModelRole model_role_from_string(const std::string &s);

double input_scale(Modality m);
double target_scale(Modality m);

struct TrainConfig {
    std::size_t epochs = 1500;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    double lr_final = 0.1;   // cosine decay to lr * lr_final over the run
    double grad_clip = 1.0;  // global gradient norm, 0 = off
    dataset::AugmentConfig augment;
    std::uint64_t seed = 0;
};

struct SamplerConfig {
    std::size_t ensemble = 50;
    std::size_t dm_steps = 2000;
    FmSamplerConfig fm;
    std::uint64_t seed = 0;
};

// Network output plus the best linear estimate of the regression target
// from x_t alone, for data of per-pixel spread sigma_data: for DM the noise,
// c = sqrt(1 - abar) / (abar s^2 + 1 - abar); for FM the velocity,
// c = (t s^2 - (1 - t)) / ((1 - t)^2 + t^2 s^2). A zero network is then
// already a stable (if uninformed) sampler and training fits the residual.
class SkipField : public ConditionalField {
   public:
    SkipField(ModelRole role, const ConditionalField &net, const NoiseSchedule &schedule, double sigma_data);
    Tensor field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const override;
    double skip(double t) const;

   private:
    ModelRole role_;
    const ConditionalField &net_;
    const NoiseSchedule &schedule_;
    double sigma2_;
};

double sigma_data();

// The JSON forms leave out the seeds, which runs derive from a master seed.
void to_json(nlohmann::json &j, const TrainConfig &c);
void from_json(const nlohmann::json &j, TrainConfig &c);
void to_json(nlohmann::json &j, const SamplerConfig &c);
void from_json(const nlohmann::json &j, SamplerConfig &c);

struct Batch {
    Tensor y;     // [B,7,h,w] model units
    Tensor diff;  // [B,1,h,w] model units
};

// Augments and stacks pairs[indices[i]] with one transform per item.
Batch make_batch(const std::vector<SlicePair> &pairs, std::span<const std::size_t> indices,
                 const dataset::AugmentConfig &augment, Rng &rng);

// Called after every epoch with the mean batch loss; returning false stops.
using EpochCallback = std::function<bool(std::size_t epoch, double loss)>;

// Trains in place; returns the per-epoch mean loss. Throws NumericError on a
// non-finite loss.
std::vector<double> train_model(ModelRole role, UNetLite &net, const std::vector<SlicePair> &pairs,
                                const TrainConfig &config, const NoiseSchedule &schedule,
                                const EpochCallback &on_epoch = {});

// Predicted difference image [H,W] for one pair.
Tensor predict_e2e(const UNetLite &net, const SlicePair &pair);

// N generated difference images for one pair, aggregated. stats (optional)
// receives the FM per-sample step statistics.
PosteriorEnsemble sample_posterior(ModelRole role, const UNetLite &net, const NoiseSchedule &schedule,
                                   const SlicePair &pair, const SamplerConfig &config, std::uint64_t seed,
                                   std::vector<StepStats> *stats = nullptr);

}  // namespace clab
