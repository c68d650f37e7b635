#include "clab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace clab {

NoiseSchedule::NoiseSchedule(std::size_t steps, double alpha_first, double alpha_last) {
    if (steps < 2) throw std::invalid_argument("schedule: need at least 2 steps");
    if (!(alpha_first > 0.0) || !(alpha_last >= alpha_first) || !(alpha_last < 1.0)) {
        throw std::invalid_argument("schedule: need 0 < alpha_first <= alpha_last < 1");
    }
    alpha_.resize(steps);
    const double inc = (alpha_last - alpha_first) / static_cast<double>(steps - 1);
    for (std::size_t i = 0; i < steps; ++i) alpha_[i] = alpha_first + inc * static_cast<double>(i);
    alpha_.front() = alpha_first;
    alpha_.back() = alpha_last;
    alpha_bar_.resize(steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        prod *= 1.0 - alpha_[i];
        alpha_bar_[i] = prod;
    }
}

std::size_t NoiseSchedule::check(std::size_t t) const {
    if (t < 1 || t > alpha_.size()) {
        throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [1, " + std::to_string(alpha_.size()) +
                                "]");
    }
    return t;
}

std::vector<std::size_t> NoiseSchedule::sampling_grid(std::size_t n) const {
    const std::size_t T = steps();
    if (n < 1 || n > T) throw std::invalid_argument("schedule: sampling steps must lie in [1, " + std::to_string(T) + "]");
    std::vector<std::size_t> grid(n);
    for (std::size_t k = 0; k < n; ++k) grid[k] = T - (k * T) / n;
    return grid;
}

void to_json(nlohmann::json &j, const ScheduleConfig &c) {
    j = nlohmann::json{{"steps", c.steps}, {"alpha_first", c.alpha_first}, {"alpha_last", c.alpha_last}};
}

void from_json(const nlohmann::json &j, ScheduleConfig &c) {
    for (const auto &[key, _] : j.items()) {
        if (key != "steps" && key != "alpha_first" && key != "alpha_last")
            throw std::invalid_argument("schedule: unknown key '" + key + "'");
    }
    ScheduleConfig d;
    c.steps = j.value("steps", d.steps);
    c.alpha_first = j.value("alpha_first", d.alpha_first);
    c.alpha_last = j.value("alpha_last", d.alpha_last);
}

namespace diffusion {

namespace {

std::vector<float> per_sample(const Tensor &x, std::span<const double> coef) {
    const std::size_t batch = x.dim(0), inner = x.size() / batch;
    std::vector<float> out(x.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] = static_cast<float>(coef[n]);
    return out;
}

void require_finite(const Tensor &x, std::size_t t) {
    if (!all_finite(x.data())) throw NumericError("diffusion: non-finite sampler state at step " + std::to_string(t));
}

// Runs the reverse chain on a strided grid; eps_at(x, t) returns the score.
Tensor run_reverse(const NoiseSchedule &s, const ScoreFn &score, const Shape &shape, std::uint64_t seed,
                   std::size_t sampling_steps) {
    NoGradGuard ng;
    const std::size_t batch = shape.at(0), inner = numel(shape) / batch;
    std::vector<Rng> rngs;
    for (std::size_t b = 0; b < batch; ++b) rngs.emplace_back(split_seed(seed, b));

    Tensor x(shape);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < inner; ++i) x[b * inner + i] = static_cast<float>(rngs[b].normal());

    const auto grid = s.sampling_grid(sampling_steps);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const std::size_t t = grid[k];
        const std::size_t next = k + 1 < grid.size() ? grid[k + 1] : 0;
        double a = 0.0;
        for (std::size_t u = next + 1; u <= t; ++u) a += s.alpha(u);
        Tensor sc = score(x, t);
        if (sc.shape() != shape) throw ShapeError("diffusion: score shape " + shape_str(sc.shape()) + " != " + shape_str(shape));
        // The last update returns the drift-only mean, as score-SDE samplers do.
        const double noise = next == 0 ? 0.0 : std::sqrt(a);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t j = b * inner + i;
                const double xv = x[j];
                const double z = noise > 0.0 ? rngs[b].normal() : 0.0;
                x[j] = static_cast<float>(xv + a * (0.5 * xv + sc[j]) + noise * z);
            }
        }
        require_finite(x, t);
    }
    return x;
}

}  // namespace

Tensor forward_noise(const NoiseSchedule &s, const Tensor &x0, std::span<const std::size_t> t, const Tensor &eps) {
    if (x0.shape() != eps.shape()) throw ShapeError("forward_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
    if (x0.rank() < 1 || t.size() != x0.dim(0)) throw ShapeError("forward_noise: need one step per sample");
    std::vector<double> sig(t.size()), noi(t.size());
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double ab = s.alpha_bar(t[n]);
        sig[n] = std::sqrt(ab);
        noi[n] = std::sqrt(1.0 - ab);
    }
    Tensor a(x0.shape(), per_sample(x0, sig)), b(x0.shape(), per_sample(x0, noi));
    return ops::add(ops::mul(x0, a), ops::mul(eps, b));
}

Tensor dsm_loss(const ConditionalField &net, const NoiseSchedule &s, const Tensor &x0, const Tensor &y, Rng &rng) {
    const std::size_t batch = x0.dim(0);
    std::vector<std::size_t> t(batch);
    std::vector<float> tn(batch);
    for (std::size_t n = 0; n < batch; ++n) {
        t[n] = 1 + rng.below(s.steps());
        tn[n] = static_cast<float>(static_cast<double>(t[n]) / static_cast<double>(s.steps()));
    }
    Tensor eps(x0.shape());
    for (auto &v : eps.data()) v = static_cast<float>(rng.normal());
    Tensor xt = forward_noise(s, x0.detach(), t, eps);
    Tensor r = ops::sub(net.field(xt, y, tn), eps);
    return ops::scale(ops::sum(ops::mul(r, r)), 1.0f / static_cast<float>(batch));
}

Tensor reverse_sample_score(const NoiseSchedule &s, const ScoreFn &score, const Shape &shape, std::uint64_t seed,
                            std::size_t sampling_steps) {
    if (shape.empty() || numel(shape) == 0) throw ShapeError("reverse_sample: empty shape");
    return run_reverse(s, score, shape, seed, sampling_steps);
}

Tensor reverse_sample(const NoiseSchedule &s, const ConditionalField &net, const Tensor &y, std::uint64_t seed,
                      std::size_t sampling_steps) {
    if (y.rank() != 4) throw ShapeError("reverse_sample: expected y [B,C,H,W], got " + shape_str(y.shape()));
    const std::size_t batch = y.dim(0);
    const double T = static_cast<double>(s.steps());
    ScoreFn score = [&](const Tensor &x, std::size_t t) {
        std::vector<float> tn(batch, static_cast<float>(static_cast<double>(t) / T));
        Tensor eps = net.field(x, y, tn);
        return ops::scale(eps, static_cast<float>(-1.0 / std::sqrt(1.0 - s.alpha_bar(t))));
    };
    return run_reverse(s, score, {batch, 1, y.dim(2), y.dim(3)}, seed, sampling_steps);
}

ScoreFn gaussian_score(const NoiseSchedule &s, double mu, double sigma) {
    return [&s, mu, sigma](const Tensor &x, std::size_t t) {
        const double ab = s.alpha_bar(t);
        const double m = std::sqrt(ab) * mu;
        const double v = ab * sigma * sigma + (1.0 - ab);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(-(x[i] - m) / v);
        return out;
    };
}

}  // namespace diffusion

}  // namespace clab
