#include "clab/train.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>

#include "clab/adam.hpp"
#include <stdexcept>

namespace clab {

std::string to_string(ModelRole r) {
    switch (r) {
        case ModelRole::E2E: return "e2e";
        case ModelRole::DM: return "dm";
        case ModelRole::FM: return "fm";
    }
    return "?";
}

ModelRole model_role_from_string(const std::string &s) {
    if (s == "e2e") return ModelRole::E2E;
    if (s == "dm") return ModelRole::DM;
    if (s == "fm") return ModelRole::FM;
    throw std::invalid_argument("unknown model '" + s + "' (expected e2e, dm or fm)");
}

double input_scale(Modality m) { return m == Modality::T1 ? 1e-3 : 1.0; }
double target_scale(Modality m) { return 10.0 * input_scale(m); }
// Most pixels are background with a difference near zero; the rim carries
// the large values. A small spread keeps the skip close to the pure-noise
// estimate, which is what the background needs.
double sigma_data() { return 0.1; }

SkipField::SkipField(ModelRole role, const ConditionalField &net, const NoiseSchedule &schedule, double sigma_data)
    : role_(role), net_(net), schedule_(schedule), sigma2_(sigma_data * sigma_data) {
    if (role == ModelRole::E2E) throw std::invalid_argument("SkipField: e2e has no field");
}

double SkipField::skip(double t) const {
    if (role_ == ModelRole::DM) {
        const double T = static_cast<double>(schedule_.steps());
        const auto k = static_cast<std::size_t>(std::clamp(std::llround(t * T), 1LL, static_cast<long long>(T)));
        const double ab = schedule_.alpha_bar(k);
        return std::sqrt(1.0 - ab) / (ab * sigma2_ + 1.0 - ab);
    }
    const double u = 1.0 - t;
    return (t * sigma2_ - u) / (u * u + t * t * sigma2_);
}

Tensor SkipField::field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const {
    Tensor out = net_.field(x_t, y, t);
    const std::size_t b = x_t.dim(0), per = x_t.size() / b;
    std::vector<float> lin(x_t.size());
    for (std::size_t k = 0; k < b; ++k) {
        const double c = skip(t[k]);
        for (std::size_t i = 0; i < per; ++i) lin[k * per + i] = static_cast<float>(c * x_t[k * per + i]);
    }
    return ops::add(out, Tensor(x_t.shape(), std::move(lin)));
}

namespace {

void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> known, const char *what) {
    for (const auto &[key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char *k) { return key == k; }))
            throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
    }
}

SlicePair prepared(const SlicePair &p) { return p.normalized ? p : dataset::normalize(p); }

// Repeats a [C,H,W] tensor n times along a new batch axis, scaled.
Tensor repeat_batch(const Tensor &t, std::size_t n, float scale) {
    Shape s{n};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    std::vector<float> out(n * t.size());
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < t.size(); ++i) out[k * t.size() + i] = t[i] * scale;
    return Tensor(s, std::move(out));
}

}  // namespace

void to_json(nlohmann::json &j, const TrainConfig &c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"lr_final", c.lr_final},
                       {"grad_clip", c.grad_clip},
                       {"max_angle_deg", c.augment.max_angle_deg},
                       {"quarter_turns", c.augment.quarter_turns},
                       {"crop_height", c.augment.crop_height},
                       {"crop_width", c.augment.crop_width}};
}

void from_json(const nlohmann::json &j, TrainConfig &c) {
    reject_unknown(j, {"epochs", "batch_size", "lr", "lr_final", "grad_clip", "max_angle_deg", "quarter_turns", "crop_height", "crop_width"}, "train");
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.lr_final = j.value("lr_final", d.lr_final);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.augment.max_angle_deg = j.value("max_angle_deg", d.augment.max_angle_deg);
    c.augment.quarter_turns = j.value("quarter_turns", d.augment.quarter_turns);
    c.augment.crop_height = j.value("crop_height", d.augment.crop_height);
    c.augment.crop_width = j.value("crop_width", d.augment.crop_width);
}

void to_json(nlohmann::json &j, const SamplerConfig &c) {
    j = nlohmann::json{{"ensemble", c.ensemble},
                       {"dm_steps", c.dm_steps},
                       {"ode_mode", to_string(c.fm.mode)},
                       {"ode_steps", c.fm.steps},
                       {"atol", c.fm.atol},
                       {"rtol", c.fm.rtol},
                       {"max_steps", c.fm.max_steps}};
}

void from_json(const nlohmann::json &j, SamplerConfig &c) {
    reject_unknown(j, {"ensemble", "dm_steps", "ode_mode", "ode_steps", "atol", "rtol", "max_steps"}, "sampler");
    SamplerConfig d;
    c.ensemble = j.value("ensemble", d.ensemble);
    c.dm_steps = j.value("dm_steps", d.dm_steps);
    c.fm.mode = ode_mode_from_string(j.value("ode_mode", to_string(d.fm.mode)));
    c.fm.steps = j.value("ode_steps", d.fm.steps);
    c.fm.atol = j.value("atol", d.fm.atol);
    c.fm.rtol = j.value("rtol", d.fm.rtol);
    c.fm.max_steps = j.value("max_steps", d.fm.max_steps);
}

Batch make_batch(const std::vector<SlicePair> &pairs, std::span<const std::size_t> indices,
                 const dataset::AugmentConfig &augment, Rng &rng) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    std::vector<float> ys, ds;
    std::size_t h = 0, w = 0;
    for (std::size_t idx : indices) {
        SlicePair p = dataset::augment(prepared(pairs.at(idx)), augment, rng);
        if (h == 0) {
            h = p.height();
            w = p.width();
        } else if (p.height() != h || p.width() != w) {
            throw ShapeError("make_batch: pairs of different sizes need a crop");
        }
        const auto si = static_cast<float>(input_scale(p.modality));
        const auto st = static_cast<float>(target_scale(p.modality));
        for (float v : p.y.data()) ys.push_back(v * si);
        for (float v : p.diff.data()) ds.push_back(v * st);
    }
    const std::size_t b = indices.size();
    return Batch{Tensor({b, kStackDepth, h, w}, std::move(ys)), Tensor({b, 1, h, w}, std::move(ds))};
}

std::vector<double> train_model(ModelRole role, UNetLite &net, const std::vector<SlicePair> &pairs,
                                const TrainConfig &config, const NoiseSchedule &schedule, const EpochCallback &on_epoch) {
    if (config.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (!(config.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (config.epochs > 0 && pairs.empty()) throw std::invalid_argument("train: no training pairs");
    const bool conditional = role != ModelRole::E2E;
    if (net.config().time_conditioned != conditional) {
        throw std::invalid_argument("train: network time conditioning does not match model " + to_string(role));
    }

    if (config.grad_clip < 0.0) throw std::invalid_argument("train: grad_clip must be >= 0");
    if (!(config.lr_final > 0.0 && config.lr_final <= 1.0)) throw std::invalid_argument("train: lr_final must be in (0, 1]");
    Adam opt(net.parameters(), {.lr = config.lr, .max_grad_norm = config.grad_clip});
    const SkipField skip(conditional ? role : ModelRole::DM, net, schedule, sigma_data());
    const std::size_t per_epoch = (pairs.size() + config.batch_size - 1) / std::max<std::size_t>(config.batch_size, 1);
    const double total_steps = static_cast<double>(std::max<std::size_t>(config.epochs * per_epoch, 1));
    Rng rng(config.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const double progress = static_cast<double>(opt.steps()) / total_steps;
            opt.set_lr(config.lr * (config.lr_final + (1.0 - config.lr_final) * 0.5 * (1.0 + std::cos(M_PI * progress))));
            const std::size_t n = std::min(config.batch_size, order.size() - start);
            Batch b = make_batch(pairs, std::span(order).subspan(start, n), config.augment, rng);
            Tensor loss;
            switch (role) {
                case ModelRole::E2E: loss = ops::mean(ops::abs(ops::sub(net.forward_e2e(b.y), b.diff))); break;
                case ModelRole::DM: loss = diffusion::dsm_loss(skip, schedule, b.diff, b.y, rng); break;
                case ModelRole::FM: loss = flowmatch::cfm_loss(skip, b.diff, b.y, rng); break;
            }
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch + 1));
            }
            loss.backward();
            opt.step();
            total += value;
            ++batches;
        }
        history.push_back(total / static_cast<double>(batches));
        if (on_epoch && !on_epoch(epoch + 1, history.back())) break;
    }
    return history;
}

Tensor predict_e2e(const UNetLite &net, const SlicePair &raw) {
    NoGradGuard ng;
    const SlicePair p = prepared(raw);
    Tensor out = net.forward_e2e(repeat_batch(p.y, 1, static_cast<float>(input_scale(p.modality))));
    const double st = target_scale(p.modality);
    Tensor diff({p.height(), p.width()});
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = static_cast<float>(out[i] / st);
    return diff;
}

PosteriorEnsemble sample_posterior(ModelRole role, const UNetLite &net, const NoiseSchedule &schedule,
                                   const SlicePair &raw, const SamplerConfig &config, std::uint64_t seed,
                                   std::vector<StepStats> *stats) {
    if (role == ModelRole::E2E) throw std::invalid_argument("sample: the e2e model is deterministic");
    NoGradGuard ng;
    const SlicePair p = prepared(raw);
    const std::size_t n = config.ensemble, h = p.height(), w = p.width();
    Tensor y = repeat_batch(p.y, n, static_cast<float>(input_scale(p.modality)));
    Tensor x;
    const SkipField skip(role, net, schedule, sigma_data());
    if (role == ModelRole::DM) {
        x = diffusion::reverse_sample(schedule, skip, y, seed, config.dm_steps);
    } else {
        FmSamples out = flowmatch::sample(skip, y, {n, 1, h, w}, seed, config.fm);
        x = out.x;
        if (stats) *stats = std::move(out.stats);
    }
    const double st = target_scale(p.modality);
    for (auto &v : x.data()) v = static_cast<float>(v / st);
    return posterior::aggregate(x, to_string(role));
}

}  // namespace clab
