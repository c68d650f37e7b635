#include "clab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace clab {

Tensor SlicePair::pre_central() const {
    const std::size_t hw = height() * width();
    const std::size_t c = kStackDepth / 2;
    return Tensor({height(), width()}, std::vector<float>(y.data().begin() + c * hw, y.data().begin() + (c + 1) * hw));
}

bool SlicePair::has_roi() const {
    return std::any_of(roi.data().begin(), roi.data().end(), [](float v) { return v != 0.0f; });
}

namespace dataset {

namespace {

// Extracts the [H,W] plane with index z from a [D,H,W] tensor.
std::vector<float> plane(const Tensor &vol, std::size_t z) {
    const std::size_t hw = vol.dim(1) * vol.dim(2);
    return {vol.data().begin() + z * hw, vol.data().begin() + (z + 1) * hw};
}

SlicePair scaled(const SlicePair &p, float factor) {
    SlicePair out = p;
    auto mul = [factor](const Tensor &t) {
        Tensor r = t.detach();
        for (auto &v : r.data()) v *= factor;
        return r;
    };
    out.y = mul(p.y);
    out.x = mul(p.x);
    out.diff = mul(p.diff);
    return out;
}

// Index maps for a counter-clockwise quarter turn of an h x w plane.
std::vector<float> rot90(const std::vector<float> &src, std::size_t h, std::size_t w) {
    // Result is w x h: out[i][j] = src[j][w-1-i]
    std::vector<float> out(h * w);
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j) out[i * h + j] = src[j * w + (w - 1 - i)];
    return out;
}

std::vector<float> rotate_small(const std::vector<float> &src, std::size_t h, std::size_t w, double deg, bool nearest) {
    const double th = deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    auto at = [&](long y, long x) {
        y = std::clamp(y, 0L, static_cast<long>(h) - 1);
        x = std::clamp(x, 0L, static_cast<long>(w) - 1);
        return static_cast<double>(src[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)]);
    };
    std::vector<float> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // Inverse map: sample the source at the back-rotated position.
            const double dy = y - cy, dx = x - cx;
            const double sx = c * dx - s * dy + cx;
            const double sy = s * dx + c * dy + cy;
            double v;
            if (nearest) {
                v = at(std::lround(sy), std::lround(sx));
            } else {
                const long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                    fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            }
            out[y * w + x] = static_cast<float>(v);
        }
    }
    return out;
}

// Transforms every plane of a [C,H,W] (or [H,W]) tensor.
Tensor transform(const Tensor &t, const AugmentParams &p, bool nearest) {
    const bool stacked = t.rank() == 3;
    const std::size_t channels = stacked ? t.dim(0) : 1;
    std::size_t h = t.dim(stacked ? 1 : 0), w = t.dim(stacked ? 2 : 1);
    const int turns = ((p.quarter_turns % 4) + 4) % 4;
    const std::size_t rh = turns % 2 ? w : h, rw = turns % 2 ? h : w;
    const std::size_t ch = p.crop_h ? p.crop_h : rh, cw = p.crop_w ? p.crop_w : rw;
    if (p.crop_y + ch > rh || p.crop_x + cw > rw) {
        throw std::invalid_argument("augment: crop window exceeds the " + std::to_string(rh) + "x" + std::to_string(rw) +
                                    " image");
    }
    std::vector<float> out;
    out.reserve(channels * ch * cw);
    for (std::size_t c = 0; c < channels; ++c) {
        std::vector<float> img(t.data().begin() + c * h * w, t.data().begin() + (c + 1) * h * w);
        std::size_t ih = h, iw = w;
        for (int k = 0; k < turns; ++k) {
            img = rot90(img, ih, iw);
            std::swap(ih, iw);
        }
        if (p.angle_deg != 0.0) img = rotate_small(img, ih, iw, p.angle_deg, nearest);
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x) out.push_back(img[(p.crop_y + y) * iw + p.crop_x + x]);
    }
    return stacked ? Tensor({channels, ch, cw}, std::move(out)) : Tensor({ch, cw}, std::move(out));
}

}  // namespace

std::vector<SlicePair> extract_pairs(const PhantomVolume &vol, std::size_t volume_id) {
    const std::size_t D = vol.depth(), H = vol.height(), W = vol.width();
    if (D < kStackDepth) {
        throw std::invalid_argument("extract_pairs: volume depth " + std::to_string(D) + " < " +
                                    std::to_string(kStackDepth));
    }
    const std::size_t half = kStackDepth / 2;
    std::vector<SlicePair> pairs;
    for (std::size_t d = half; d + half < D; ++d) {
        SlicePair p;
        std::vector<float> stack;
        stack.reserve(kStackDepth * H * W);
        for (std::size_t k = d - half; k <= d + half; ++k) {
            auto s = plane(vol.pre, k);
            stack.insert(stack.end(), s.begin(), s.end());
        }
        auto post = plane(vol.post, d);
        auto pre = plane(vol.pre, d);
        std::vector<float> diff(post.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = post[i] - pre[i];
        p.y = Tensor({kStackDepth, H, W}, std::move(stack));
        p.x = Tensor({H, W}, std::move(post));
        p.diff = Tensor({H, W}, std::move(diff));
        p.roi = Tensor({H, W}, plane(vol.roi, d));
        p.modality = vol.modality;
        p.volume_id = volume_id;
        p.slice_index = d;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

SlicePair normalize(const SlicePair &pair) {
    if (pair.normalized || pair.modality == Modality::T1) {
        SlicePair out = pair;
        out.normalized = true;
        return out;
    }
    const float peak = *std::max_element(pair.y.data().begin(), pair.y.data().end());
    if (!(peak > 0.0f)) throw std::invalid_argument("normalize: T1w stack maximum must be positive");
    SlicePair out = scaled(pair, 1.0f / peak);
    out.normalized = true;
    out.norm_factor = peak;
    return out;
}

SlicePair denormalize(const SlicePair &pair) {
    if (!pair.normalized) return pair;
    SlicePair out = pair.norm_factor == 1.0f ? pair : scaled(pair, pair.norm_factor);
    out.normalized = false;
    out.norm_factor = 1.0f;
    return out;
}

AugmentParams draw_augment(const AugmentConfig &cfg, std::size_t height, std::size_t width, Rng &rng) {
    AugmentParams p;
    p.quarter_turns = cfg.quarter_turns ? static_cast<int>(rng.below(4)) : 0;
    p.angle_deg = cfg.max_angle_deg > 0.0 ? rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg) : 0.0;
    const std::size_t rh = p.quarter_turns % 2 ? width : height;
    const std::size_t rw = p.quarter_turns % 2 ? height : width;
    p.crop_h = cfg.crop_height ? cfg.crop_height : rh;
    p.crop_w = cfg.crop_width ? cfg.crop_width : rw;
    if (p.crop_h > rh || p.crop_w > rw) throw std::invalid_argument("augment: crop larger than image");
    p.crop_y = rng.below(rh - p.crop_h + 1);
    p.crop_x = rng.below(rw - p.crop_w + 1);
    return p;
}

SlicePair apply_augment(const SlicePair &pair, const AugmentParams &params) {
    SlicePair out = pair;
    out.y = transform(pair.y, params, false);
    out.x = transform(pair.x, params, false);
    out.diff = transform(pair.diff, params, false);
    out.roi = transform(pair.roi, params, true);
    return out;
}

SlicePair augment(const SlicePair &pair, const AugmentConfig &cfg, Rng &rng) {
    return apply_augment(pair, draw_augment(cfg, pair.height(), pair.width(), rng));
}

bool Split::disjoint() const {
    std::set<std::size_t> seen;
    for (const auto *ids : {&train, &validation, &test})
        for (auto id : *ids)
            if (!seen.insert(id).second) return false;
    return true;
}

Split make_split(const SplitConfig &cfg) {
    Split s;
    std::size_t id = 0;
    for (std::size_t i = 0; i < cfg.train; ++i) s.train.push_back(id++);
    for (std::size_t i = 0; i < cfg.validation; ++i) s.validation.push_back(id++);
    for (std::size_t i = 0; i < cfg.test; ++i) s.test.push_back(id++);
    return s;
}

std::vector<SlicePair> select_test_slices(const std::vector<SlicePair> &pairs, std::size_t stride) {
    if (stride == 0) throw std::invalid_argument("select_test_slices: stride must be positive");
    std::vector<SlicePair> roi_slices;
    for (const auto &p : pairs)
        if (p.has_roi()) roi_slices.push_back(p);
    std::vector<SlicePair> out;
    for (std::size_t i = 0; i < roi_slices.size(); i += stride) out.push_back(roi_slices[i]);
    return out;
}

void to_json(nlohmann::json &j, const SplitConfig &c) {
    j = nlohmann::json{{"train", c.train},
                       {"validation", c.validation},
                       {"test", c.test},
                       {"test_slice_stride", c.test_slice_stride}};
}

void from_json(const nlohmann::json &j, SplitConfig &c) {
    for (const auto &[key, _] : j.items()) {
        if (key != "train" && key != "validation" && key != "test" && key != "test_slice_stride") {
            throw std::invalid_argument("split: unknown key '" + key + "'");
        }
    }
    SplitConfig d;
    c.train = j.value("train", d.train);
    c.validation = j.value("validation", d.validation);
    c.test = j.value("test", d.test);
    c.test_slice_stride = j.value("test_slice_stride", d.test_slice_stride);
}

void to_json(nlohmann::json &j, const Split &s) {
    j = nlohmann::json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

void from_json(const nlohmann::json &j, Split &s) {
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.validation = j.at("validation").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
}

}  // namespace dataset

}  // namespace clab
