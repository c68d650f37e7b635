#pragma once

// Training and evaluation samples cut from phantom volumes.
//
// Each sample pairs a 2.5D pre-contrast stack (seven adjacent slices, stored
// [7,H,W]) with the post-contrast central slice and the difference image the
// networks learn. T1w samples are scaled jointly by the stack maximum; T1
// samples keep their physical values.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "clab/phantom.hpp"
#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

inline constexpr std::size_t kStackDepth = 7;

struct SlicePair {
    Tensor y;     // [7,H,W] pre-contrast stack, central channel aligned to x
    Tensor x;     // [H,W] post-contrast central slice
    Tensor diff;  // [H,W] x - pre central
    Tensor roi;   // [H,W] 0/1
    Modality modality = Modality::T1;
    std::size_t volume_id = 0;
    std::size_t slice_index = 0;
    bool normalized = false;
    float norm_factor = 1.0f;  // values were divided by this

    std::size_t height() const { return x.dim(0); }
    std::size_t width() const { return x.dim(1); }
    // Central channel of y as an [H,W] tensor.
    Tensor pre_central() const;
    bool has_roi() const;
};

namespace dataset {

// One pair per interior slice d in [3, D-4]. Requires D >= 7.
std::vector<SlicePair> extract_pairs(const PhantomVolume &vol, std::size_t volume_id);

SlicePair normalize(const SlicePair &pair);
SlicePair denormalize(const SlicePair &pair);

struct AugmentConfig {
    double max_angle_deg = 15.0;
    bool quarter_turns = true;
    std::size_t crop_height = 0;  // 0 = full extent
    std::size_t crop_width = 0;
};

struct AugmentParams {
    int quarter_turns = 0;      // counter-clockwise multiples of 90 degrees
    double angle_deg = 0.0;     // small-angle rotation, bilinear with edge clamp
    std::size_t crop_y = 0, crop_x = 0;
    std::size_t crop_h = 0, crop_w = 0;
};

AugmentParams draw_augment(const AugmentConfig &cfg, std::size_t height, std::size_t width, Rng &rng);

// Applies one transform to y, x, diff and roi together (roi uses nearest
// neighbor for the small-angle rotation).
SlicePair apply_augment(const SlicePair &pair, const AugmentParams &params);

SlicePair augment(const SlicePair &pair, const AugmentConfig &cfg, Rng &rng);

struct SplitConfig {
    std::size_t train = 64;
    std::size_t validation = 4;
    std::size_t test = 5;
    std::size_t test_slice_stride = 5;  // keep every n-th ROI slice of a test volume
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;

    bool disjoint() const;
};

// Assigns volume ids 0..n-1 in order: train, then validation, then test.
Split make_split(const SplitConfig &cfg);

// Test slices of a volume: interior slices whose central ROI slice is
// nonempty, thinned to every stride-th one.
std::vector<SlicePair> select_test_slices(const std::vector<SlicePair> &pairs, std::size_t stride);

void to_json(nlohmann::json &j, const SplitConfig &c);
void from_json(const nlohmann::json &j, SplitConfig &c);
void to_json(nlohmann::json &j, const Split &s);
void from_json(const nlohmann::json &j, Split &s);

}  // namespace dataset

}  // namespace clab
