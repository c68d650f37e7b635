#include "clab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

namespace clab::metrics {

namespace {

void require_same(const char *op, std::size_t a, std::size_t b) {
    if (a != b) {
        throw MetricError(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> g(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    const double s = std::accumulate(g.begin(), g.end(), 0.0);
    for (auto &v : g) v /= s;
    return g;
}

}  // namespace

double mae(std::span<const float> pred, std::span<const float> target) {
    require_same("mae", pred.size(), target.size());
    if (pred.empty()) throw MetricError("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(static_cast<double>(pred[i]) - target[i]);
    return s / static_cast<double>(pred.size());
}

double mae(std::span<const float> pred, std::span<const float> target, std::span<const float> mask) {
    require_same("mae", pred.size(), target.size());
    require_same("mae(mask)", pred.size(), mask.size());
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        s += std::fabs(static_cast<double>(pred[i]) - target[i]);
        ++n;
    }
    if (n == 0) throw MetricError("mae: empty mask");
    return s / static_cast<double>(n);
}

double ssim(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width,
            const SsimOptions &opt) {
    require_same("ssim", a.size(), b.size());
    require_same("ssim(shape)", a.size(), height * width);
    if (height < opt.window || width < opt.window) {
        throw MetricError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                          " smaller than window " + std::to_string(opt.window));
    }
    const auto g = gaussian_window(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    const std::size_t oh = height - opt.window + 1, ow = width - opt.window + 1;

    // Separable filtering of a, b, a*a, b*b, a*b; rows first, then columns.
    // The same code path computes every moment so ssim(a, a) is exactly 1.
    auto filter = [&](auto value) {
        std::vector<double> rows(height * ow, 0.0);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (std::size_t k = 0; k < opt.window; ++k) s += g[k] * value(y * width + x + k);
                rows[y * ow + x] = s;
            }
        std::vector<double> out(oh * ow, 0.0);
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (std::size_t k = 0; k < opt.window; ++k) s += g[k] * rows[(y + k) * ow + x];
                out[y * ow + x] = s;
            }
        return out;
    };
    auto ad = [&](std::size_t i) { return static_cast<double>(a[i]); };
    auto bd = [&](std::size_t i) { return static_cast<double>(b[i]); };
    const auto mu_a = filter(ad);
    const auto mu_b = filter(bd);
    const auto saa = filter([&](std::size_t i) { return ad(i) * ad(i); });
    const auto sbb = filter([&](std::size_t i) { return bd(i) * bd(i); });
    const auto sab = filter([&](std::size_t i) { return ad(i) * bd(i); });

    double total = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
        const double va = saa[i] - mu_a[i] * mu_a[i];
        const double vb = sbb[i] - mu_b[i] * mu_b[i];
        const double cov = sab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        total += num / den;
    }
    return total / static_cast<double>(oh * ow);
}

Correlation pearson(std::span<const float> u, std::span<const float> v, std::span<const float> skip) {
    require_same("pearson", u.size(), v.size());
    if (!skip.empty()) require_same("pearson(skip)", u.size(), skip.size());
    auto used = [&](std::size_t i) { return skip.empty() || skip[i] == 0.0f; };

    std::size_t n = 0;
    double su = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!used(i)) continue;
        su += u[i];
        sv += v[i];
        ++n;
    }
    if (n < 3) throw MetricError("pearson: need at least 3 voxels, have " + std::to_string(n));
    const double mu = su / static_cast<double>(n), mv = sv / static_cast<double>(n);
    double cuu = 0.0, cvv = 0.0, cuv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!used(i)) continue;
        const double du = u[i] - mu, dv = v[i] - mv;
        cuu += du * du;
        cvv += dv * dv;
        cuv += du * dv;
    }
    if (cuu <= 0.0) throw MetricError("pearson: first argument has zero variance");
    if (cvv <= 0.0) throw MetricError("pearson: second argument has zero variance");

    Correlation c;
    c.n = n;
    c.r = std::clamp(cuv / std::sqrt(cuu * cvv), -1.0, 1.0);
    c.p_value = pearson_p_value(c.r, n);
    return c;
}

double pearson_p_value(double r, std::size_t n) {
    if (n < 3) throw MetricError("pearson_p_value: need n >= 3");
    const double df = static_cast<double>(n - 2);
    const double one_minus_r2 = 1.0 - r * r;
    if (one_minus_r2 <= 0.0) return 0.0;
    // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2) with t^2 = df r^2 / (1 - r^2).
    const double t2 = df * r * r / one_minus_r2;
    return boost::math::ibeta(df / 2.0, 0.5, df / (df + t2));
}

RelativeError relative_error(std::span<const float> mean, std::span<const float> post, std::span<const float> pre) {
    require_same("relative_error", mean.size(), post.size());
    require_same("relative_error", mean.size(), pre.size());
    RelativeError re;
    re.value.assign(mean.size(), 0.0f);
    re.skip.assign(mean.size(), 0.0f);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double den = std::fabs(static_cast<double>(pre[i]) - post[i]);
        if (den > 0.0) {
            re.value[i] = static_cast<float>(std::fabs(static_cast<double>(mean[i]) - post[i]) / den);
        } else {
            re.skip[i] = 1.0f;
        }
    }
    return re;
}

std::vector<float> threshold_segment(std::span<const float> field, std::span<const float> roi, double percent) {
    require_same("threshold_segment", field.size(), roi.size());
    if (!(percent > 0.0 && percent <= 30.0)) {
        throw MetricError("threshold_segment: percent must be in (0, 30], got " + std::to_string(percent));
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i] != 0.0f) idx.push_back(i);
    if (idx.empty()) throw MetricError("threshold_segment: empty ROI");
    const auto k = static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(idx.size())));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(field[a]) > std::fabs(field[b]); });
    std::vector<float> mask(field.size(), 0.0f);
    for (std::size_t i = 0; i < k; ++i) mask[idx[i]] = 1.0f;
    return mask;
}

Overlap dice_jaccard(std::span<const float> pred, std::span<const float> truth) {
    require_same("dice_jaccard", pred.size(), truth.size());
    Overlap o;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0.0f, t = truth[i] != 0.0f;
        o.tp += p && t;
        o.fp += p && !t;
        o.fn += !p && t;
    }
    const double tp = static_cast<double>(o.tp);
    const double denom = static_cast<double>(o.tp + o.fp + o.fn);
    if (denom == 0.0) {
        o.dice = o.jaccard = 1.0;
    } else {
        o.dice = 2.0 * tp / (2.0 * tp + static_cast<double>(o.fp + o.fn));
        o.jaccard = tp / denom;
    }
    return o;
}

}  // namespace clab::metrics
