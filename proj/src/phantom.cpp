#include "clab/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "clab/rng.hpp"

namespace clab {

std::string to_string(Modality m) { return m == Modality::T1 ? "T1" : "T1w"; }

Modality modality_from_string(const std::string &s) {
    if (s == "T1" || s == "t1") return Modality::T1;
    if (s == "T1w" || s == "t1w" || s == "T1W") return Modality::T1w;
    throw std::invalid_argument("unknown modality '" + s + "' (expected T1 or T1w)");
}

void PhantomRecipe::validate() const {
    if (height < 16 || width < 16 || depth < 16) throw std::invalid_argument("phantom: all extents must be >= 16");
    if (tissue_count < 2 || tissue_count > 4) throw std::invalid_argument("phantom: tissue_count must be in [2, 4]");
    if (tumor_count > 3) throw std::invalid_argument("phantom: tumor_count must be in [0, 3]");
    if (!(tumor_radius_min > 0.0) || tumor_radius_max < tumor_radius_min) {
        throw std::invalid_argument("phantom: invalid tumor radius range");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("phantom: noise must be >= 0");
    if (tumor_count == 0) {
        if (enhancement_fraction != 0.0) {
            throw std::invalid_argument("phantom: enhancement requested but tumor_count is 0");
        }
    } else if (!(enhancement_fraction > 0.0 && enhancement_fraction <= 1.0)) {
        throw std::invalid_argument("phantom: enhancement_fraction must be in (0, 1]");
    }
}

void to_json(nlohmann::json &j, const PhantomRecipe &r) {
    j = nlohmann::json{{"height", r.height},
                       {"width", r.width},
                       {"depth", r.depth},
                       {"tissue_count", r.tissue_count},
                       {"tumor_count", r.tumor_count},
                       {"tumor_radius_min", r.tumor_radius_min},
                       {"tumor_radius_max", r.tumor_radius_max},
                       {"enhancement_fraction", r.enhancement_fraction},
                       {"noise", r.noise},
                       {"modality", to_string(r.modality)},
                       {"seed", r.seed}};
}

void from_json(const nlohmann::json &j, PhantomRecipe &r) {
    static const std::vector<std::string> known{"height", "width", "depth", "tissue_count", "tumor_count",
                                                "tumor_radius_min", "tumor_radius_max", "enhancement_fraction",
                                                "noise", "modality", "seed"};
    for (const auto &[key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("phantom recipe: unknown key '" + key + "'");
        }
    }
    PhantomRecipe d;
    r.height = j.value("height", d.height);
    r.width = j.value("width", d.width);
    r.depth = j.value("depth", d.depth);
    r.tissue_count = j.value("tissue_count", d.tissue_count);
    r.tumor_count = j.value("tumor_count", d.tumor_count);
    r.tumor_radius_min = j.value("tumor_radius_min", d.tumor_radius_min);
    r.tumor_radius_max = j.value("tumor_radius_max", d.tumor_radius_max);
    r.enhancement_fraction = j.value("enhancement_fraction", d.enhancement_fraction);
    r.noise = j.value("noise", d.noise);
    r.modality = modality_from_string(j.value("modality", to_string(d.modality)));
    r.seed = j.value("seed", d.seed);
}

namespace phantom {

namespace {

struct Ellipsoid {
    double cx, cy, cz;
    double ax, ay, az;

    // Normalized radius; <= 1 inside.
    double rho(double x, double y, double z) const {
        const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
        return std::sqrt(u * u + v * v + w * w);
    }
};

struct Tumor {
    Ellipsoid shape;
    double rim_weight;  // strength of the angular modulation
    double rim_phase;   // direction of the strongest enhancement
};

constexpr double kNominalT1[4] = {4000.0, 1350.0, 850.0, 1150.0};
constexpr double kGrayT1 = 1350.0;
constexpr double kWhiteT1 = 850.0;
constexpr double kRelaxivity = 0.6;  // T1_post = T1_pre * (1 - kRelaxivity * e)
constexpr int kLevels = 12;

}  // namespace

double intensity(Modality m, double t1, double gain) {
    if (m == Modality::T1) return t1;
    return gain * kT1wScale * (1.0 - std::exp(-kRepetitionTime / t1));
}

PhantomVolume generate(const PhantomRecipe &recipe) {
    recipe.validate();
    const std::size_t D = recipe.depth, H = recipe.height, W = recipe.width;
    const std::size_t n = D * H * W;
    Rng rng(recipe.seed);

    // Geometry and all modality-independent draws come first so both
    // modalities consume the stream identically.
    const Ellipsoid head{W / 2.0 + rng.uniform(-1, 1), H / 2.0 + rng.uniform(-1, 1), D / 2.0,
                         W * rng.uniform(0.40, 0.46), H * rng.uniform(0.40, 0.46), D * rng.uniform(0.8, 1.2)};
    std::vector<Ellipsoid> tissues;
    std::vector<double> tissue_t1;
    for (std::size_t k = 0; k < recipe.tissue_count; ++k) {
        const double s = 1.0 - 0.55 * static_cast<double>(k) / static_cast<double>(recipe.tissue_count);
        tissues.push_back({head.cx + rng.uniform(-1, 1), head.cy + rng.uniform(-1, 1), head.cz, head.ax * s, head.ay * s,
                           head.az * s});
        tissue_t1.push_back(kNominalT1[k] * rng.uniform(0.95, 1.05));
    }
    const double tex_kx = rng.uniform(0.05, 0.2), tex_ky = rng.uniform(0.05, 0.2);
    const double tex_px = rng.uniform(0, 2 * std::numbers::pi), tex_py = rng.uniform(0, 2 * std::numbers::pi);

    std::vector<Tumor> tumors;
    for (std::size_t t = 0; t < recipe.tumor_count; ++t) {
        Tumor tm;
        tm.shape.cx = head.cx + head.ax * rng.uniform(-0.45, 0.45);
        tm.shape.cy = head.cy + head.ay * rng.uniform(-0.45, 0.45);
        tm.shape.cz = D / 2.0 + D * rng.uniform(-0.2, 0.2);
        tm.shape.ax = rng.uniform(recipe.tumor_radius_min, recipe.tumor_radius_max);
        tm.shape.ay = rng.uniform(recipe.tumor_radius_min, recipe.tumor_radius_max);
        tm.shape.az = 0.5 * rng.uniform(recipe.tumor_radius_min, recipe.tumor_radius_max);
        tm.rim_weight = rng.uniform(0.2, 0.5);
        tm.rim_phase = rng.uniform(0, 2 * std::numbers::pi);
        tumors.push_back(tm);
    }
    const double tumor_t1 = rng.uniform(1600.0, 2100.0);
    const double gain = rng.uniform(0.5, 2.0);

    // Latent pre-contrast T1, ROI and enhancement score.
    std::vector<double> t1_pre(n, kT1Max);
    std::vector<float> roi(n, 0.0f);
    std::vector<double> score(n, -1.0);
    for (std::size_t z = 0; z < D; ++z) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t i = (z * H + y) * W + x;
                const double px = x + 0.5, py = y + 0.5, pz = z + 0.5;
                for (std::size_t k = 0; k < tissues.size(); ++k) {
                    if (tissues[k].rho(px, py, pz) <= 1.0) t1_pre[i] = tissue_t1[k];
                }
                if (t1_pre[i] < kT1Max) {
                    t1_pre[i] *= 1.0 + 0.03 * std::sin(tex_kx * px + tex_px) * std::cos(tex_ky * py + tex_py);
                }
                double best = 2.0;
                const Tumor *owner = nullptr;
                for (const auto &tm : tumors) {
                    const double r = tm.shape.rho(px, py, pz);
                    if (r <= 1.0 && r < best) {
                        best = r;
                        owner = &tm;
                    }
                }
                if (owner) {
                    t1_pre[i] = tumor_t1;
                    roi[i] = 1.0f;
                    const double phi = std::atan2(py - owner->shape.cy, px - owner->shape.cx);
                    score[i] = best + owner->rim_weight * 0.5 * (1.0 + std::cos(phi - owner->rim_phase));
                }
            }
        }
    }

    // The top enhancement_fraction of ROI voxels by score enhance, in
    // quantized levels so that both modalities rank them identically.
    std::vector<std::size_t> roi_idx;
    for (std::size_t i = 0; i < n; ++i)
        if (roi[i] > 0.0f) roi_idx.push_back(i);
    std::stable_sort(roi_idx.begin(), roi_idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const auto n_enh = static_cast<std::size_t>(std::llround(recipe.enhancement_fraction * roi_idx.size()));
    std::vector<double> t1_post = t1_pre;
    for (std::size_t r = 0; r < n_enh; ++r) {
        const double q = static_cast<double>(r) / static_cast<double>(n_enh);
        const int level = kLevels - static_cast<int>(std::floor(kLevels * q));
        const double e = 0.25 + 0.75 * level / kLevels;
        t1_post[roi_idx[r]] = t1_pre[roi_idx[r]] * (1.0 - kRelaxivity * e);
    }

    const Modality m = recipe.modality;
    const double g = m == Modality::T1w ? gain : 1.0;
    const double sigma = recipe.noise * std::fabs(intensity(m, kGrayT1, g) - intensity(m, kWhiteT1, g));
    const double lo = m == Modality::T1 ? kT1Min : 1e-6;
    const double hi = m == Modality::T1 ? kT1Max : std::numeric_limits<double>::max();
    std::vector<float> pre(n), post(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a = intensity(m, t1_pre[i], g);
        double b = intensity(m, t1_post[i], g);
        if (sigma > 0.0) {
            a += sigma * rng.normal();
            b += sigma * rng.normal();
        }
        pre[i] = static_cast<float>(std::clamp(a, lo, hi));
        post[i] = static_cast<float>(std::clamp(b, lo, hi));
    }

    PhantomVolume vol;
    vol.pre = Tensor({D, H, W}, std::move(pre));
    vol.post = Tensor({D, H, W}, std::move(post));
    vol.roi = Tensor({D, H, W}, std::move(roi));
    vol.modality = m;
    vol.seed = recipe.seed;
    vol.gain = g;
    return vol;
}

std::pair<PhantomVolume, PhantomVolume> paired_modalities(std::uint64_t seed, PhantomRecipe recipe) {
    recipe.seed = seed;
    recipe.modality = Modality::T1;
    PhantomVolume t1 = generate(recipe);
    recipe.modality = Modality::T1w;
    PhantomVolume t1w = generate(recipe);
    return {std::move(t1), std::move(t1w)};
}

double enhancing_fraction(const PhantomVolume &vol) {
    std::size_t roi = 0, enh = 0;
    for (std::size_t i = 0; i < vol.roi.size(); ++i) {
        if (vol.roi[i] > 0.0f) {
            ++roi;
            if (vol.post[i] != vol.pre[i]) ++enh;
        }
    }
    return roi ? static_cast<double>(enh) / static_cast<double>(roi) : 0.0;
}

nlohmann::json sidecar(const PhantomVolume &vol, const PhantomRecipe &recipe) {
    PhantomRecipe echo = recipe;
    echo.modality = vol.modality;
    echo.seed = vol.seed;
    return nlohmann::json{{"modality", to_string(vol.modality)},
                          {"seed", vol.seed},
                          {"gain", vol.gain},
                          {"layout", "DHW"},
                          {"recipe", echo}};
}

}  // namespace phantom

}  // namespace clab
