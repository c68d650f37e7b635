#pragma once

// Procedural brain phantoms with contrast-enhancing tumors.
//
// Anatomy is generated in a latent "T1 relaxation time" space and then mapped
// to the requested modality:
//   T1   identity (simulated milliseconds, clamped to [200, 4500]);
//   T1w  gain * S0 * (1 - exp(-TR / T1)), a monotone decreasing map of T1,
//        with a per-volume scanner gain drawn from [0.5, 2.0].
// Contrast agent shortens T1 inside the enhancing part of each tumor, so the
// same voxels darken in T1 and brighten in T1w.
//
// Volumes are stored slice-major: [D, H, W].

#include <cstdint>
#include <string>
#include <utility>

#include "json.hpp"

#include "clab/tensor.hpp"

namespace clab {

enum class Modality { T1, T1w };

std::string to_string(Modality m);
Modality modality_from_string(const std::string &s);

struct PhantomRecipe {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t depth = 16;
    std::size_t tissue_count = 3;       // nested tissue ellipsoids, 2..4
    std::size_t tumor_count = 2;        // 0..3
    double tumor_radius_min = 4.0;      // in-plane semi-axis range, voxels
    double tumor_radius_max = 9.0;
    double enhancement_fraction = 0.42; // share of ROI voxels that enhance
    double noise = 0.01;                // sigma relative to WM/GM contrast
    Modality modality = Modality::T1;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument on an invalid or degenerate recipe.
    void validate() const;
};

void to_json(nlohmann::json &j, const PhantomRecipe &r);
void from_json(const nlohmann::json &j, PhantomRecipe &r);

struct PhantomVolume {
    Tensor pre;   // [D,H,W]
    Tensor post;  // [D,H,W]
    Tensor roi;   // [D,H,W], 0/1
    Modality modality = Modality::T1;
    std::uint64_t seed = 0;
    double gain = 1.0;  // scanner gain applied to T1w (1 for T1)

    std::size_t depth() const { return pre.dim(0); }
    std::size_t height() const { return pre.dim(1); }
    std::size_t width() const { return pre.dim(2); }
};

namespace phantom {

inline constexpr double kT1Min = 200.0;
inline constexpr double kT1Max = 4500.0;
inline constexpr double kRepetitionTime = 500.0;
inline constexpr double kT1wScale = 1000.0;

// Modality intensity map for a latent T1 value (gain applies to T1w only).
double intensity(Modality m, double t1, double gain);

PhantomVolume generate(const PhantomRecipe &recipe);

// Same seed and recipe in both modalities; the recipe's modality is ignored.
std::pair<PhantomVolume, PhantomVolume> paired_modalities(std::uint64_t seed, PhantomRecipe recipe);

// Fraction of ROI voxels with post != pre.
double enhancing_fraction(const PhantomVolume &vol);

// Sidecar JSON written next to the volume tensors.
nlohmann::json sidecar(const PhantomVolume &vol, const PhantomRecipe &recipe);

}  // namespace phantom

}  // namespace clab
