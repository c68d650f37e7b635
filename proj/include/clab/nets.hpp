#pragma once

// Networks shared by the three model families.
//
// UNetLite is a small conditional U-Net: per level a block of two 3x3
// convolutions with SiLU, 2x average pooling on the way down, nearest
// upsampling and skip concatenation on the way up, and a zero-initialized
// 1x1 head so that a fresh network predicts a zero difference image. In
// generative roles the noisy target x_t is stacked in front of the
// conditioning channels and a sinusoidal time embedding modulates the first
// convolution of every block (x * (1 + scale) + shift).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "clab/tensor.hpp"

namespace clab {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// A learned or analytic field f(x_t, y, t). x_t and y carry the batch in
// dimension 0; t holds one time in [0, 1] per sample. The result has the
// shape of x_t.
class ConditionalField {
   public:
    virtual ~ConditionalField() = default;
    virtual Tensor field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const = 0;
};

// [N, dim] features sin(f t), cos(f t) with f geometric from 1 to 64.
Tensor time_embedding(std::span<const float> t, std::size_t dim);

struct UNetConfig {
    std::size_t cond_channels = 7;
    std::size_t levels = 3;
    std::size_t base_channels = 16;
    bool time_conditioned = false;
    std::size_t time_dim = 32;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json &j, const UNetConfig &c);
void from_json(const nlohmann::json &j, UNetConfig &c);

class UNetLite : public ConditionalField {
   public:
    explicit UNetLite(UNetConfig config);

    // y [N,7,H,W] -> predicted difference [N,1,H,W]. Requires a network
    // built without time conditioning.
    Tensor forward_e2e(const Tensor &y) const;

    // x_t [N,1,H,W], y [N,7,H,W], t in [0,1] -> [N,1,H,W].
    Tensor forward_conditional(const Tensor &x_t, const Tensor &y, std::span<const float> t) const;

    Tensor field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const override {
        return forward_conditional(x_t, y, t);
    }

    const UNetConfig &config() const { return config_; }
    NamedParams named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    // Spatial extents must be divisible by this.
    std::size_t size_multiple() const { return std::size_t{1} << config_.levels; }

   private:
    struct Conv {
        Tensor weight, bias;
    };
    struct Linear {
        Tensor weight, bias;
    };
    struct Block {
        Conv first, second;
        Linear scale, shift;  // empty without time conditioning
    };

    Tensor run(const Tensor &input, const Tensor *temb) const;
    Tensor run_block(const Block &b, const Tensor &x, const Tensor *temb) const;
    void check_input(const Tensor &y, std::size_t expected_cond) const;

    UNetConfig config_;
    std::vector<Block> down_;
    Block bottom_;
    std::vector<Block> up_;
    Conv head_;
    Linear time_hidden_;
};

// Small MLP field for vector-valued toys: x_t [N,d], y [N,c].
struct MlpConfig {
    std::size_t data_dim = 1;
    std::size_t cond_dim = 1;
    std::size_t hidden = 64;
    std::size_t layers = 3;
    std::size_t time_dim = 16;
    std::uint64_t seed = 0;
};

class MlpField : public ConditionalField {
   public:
    explicit MlpField(MlpConfig config);
    Tensor field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const override;
    NamedParams named_parameters() const;
    std::vector<Tensor> parameters() const;
    const MlpConfig &config() const { return config_; }

   private:
    MlpConfig config_;
    std::vector<std::pair<Tensor, Tensor>> layers_;
};

// Writes <stem>.vct (all parameters concatenated, rank 1) and <stem>.json
// (meta plus parameter names and shapes).
void save_checkpoint(const std::filesystem::path &stem, const NamedParams &params, const nlohmann::json &meta);

// Loads values into params, checking names and shapes. Returns the meta.
nlohmann::json load_checkpoint(const std::filesystem::path &stem, const NamedParams &params);

nlohmann::json read_checkpoint_meta(const std::filesystem::path &stem);

}  // namespace clab
