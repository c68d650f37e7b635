#pragma once

// Run configuration shared by all CLI commands. JSON on disk; unknown keys
// are rejected at every level. Per-stage seeds are derived from the single
// master seed (see derived_seed).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "clab/dataset.hpp"
#include "clab/diffusion.hpp"
#include "clab/phantom.hpp"
#include "clab/train.hpp"

namespace clab {

struct NetSection {
    std::size_t levels = 3;
    std::size_t base_channels = 16;
    std::size_t time_dim = 32;
};

struct RunConfig {
    std::string name = "demo";
    std::string output_dir = "runs";
    std::uint64_t seed = 0;
    ModelRole model = ModelRole::E2E;
    Modality modality = Modality::T1;
    PhantomRecipe phantom;  // modality and seed come from the run
    dataset::SplitConfig split;
    NetSection net;
    TrainConfig train;
    ScheduleConfig schedule;
    SamplerConfig sampler;
    std::vector<int> thresholds;  // segmentation percentiles

    RunConfig();
    std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / name; }
    UNetConfig unet(ModelRole role, Modality m) const;
};

void to_json(nlohmann::json &j, const RunConfig &c);
void from_json(const nlohmann::json &j, RunConfig &c);

RunConfig load_run_config(const std::filesystem::path &path);

// Applies "a.b.c=value" to a config document. value is parsed as JSON and
// falls back to a plain string.
void apply_override(nlohmann::json &doc, const std::string &assignment);

enum class SeedStream { Phantom = 1, NetInit = 2, Training = 3, Sampling = 4 };

// split_seed(split_seed(master, stream), 16 * role + modality) for model
// streams; split_seed(master, Phantom) for the phantom stream, whose child
// v seeds volume v.
std::uint64_t derived_seed(std::uint64_t master, SeedStream stream, ModelRole role = ModelRole::E2E,
                           Modality modality = Modality::T1);

}  // namespace clab
