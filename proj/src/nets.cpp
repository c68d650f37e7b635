#include "clab/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "clab/io.hpp"
#include "clab/rng.hpp"

namespace clab {

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng &rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<float> v(numel(shape));
    for (auto &x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f, true); }

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
    return ops::affine_scale_shift(ops::matmul(x, w), Tensor(), b);
}

}  // namespace

Tensor time_embedding(std::span<const float> t, std::size_t dim) {
    constexpr double max_freq = 64.0;
    const std::size_t half = dim / 2;
    std::vector<float> out(t.size() * dim, 0.0f);
    for (std::size_t i = 0; i < half; ++i) {
        const double f = half > 1 ? std::pow(max_freq, static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
        for (std::size_t n = 0; n < t.size(); ++n) {
            out[n * dim + i] = static_cast<float>(std::sin(f * t[n]));
            out[n * dim + half + i] = static_cast<float>(std::cos(f * t[n]));
        }
    }
    return Tensor({t.size(), dim}, std::move(out));
}

void to_json(nlohmann::json &j, const UNetConfig &c) {
    j = nlohmann::json{{"cond_channels", c.cond_channels},
                       {"levels", c.levels},
                       {"base_channels", c.base_channels},
                       {"time_conditioned", c.time_conditioned},
                       {"time_dim", c.time_dim},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json &j, UNetConfig &c) {
    static const char *known[] = {"cond_channels", "levels", "base_channels", "time_conditioned", "time_dim", "seed"};
    for (const auto &[key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw std::invalid_argument("net: unknown key '" + key + "'");
        }
    }
    UNetConfig d;
    c.cond_channels = j.value("cond_channels", d.cond_channels);
    c.levels = j.value("levels", d.levels);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.time_conditioned = j.value("time_conditioned", d.time_conditioned);
    c.time_dim = j.value("time_dim", d.time_dim);
    c.seed = j.value("seed", d.seed);
}

UNetLite::UNetLite(UNetConfig config) : config_(config) {
    if (config_.levels == 0 || config_.base_channels == 0 || config_.cond_channels == 0) {
        throw std::invalid_argument("unet: levels, base_channels and cond_channels must be positive");
    }
    if (config_.time_conditioned && (config_.time_dim < 2 || config_.time_dim % 2)) {
        throw std::invalid_argument("unet: time_dim must be even and >= 2");
    }
    Rng rng(config_.seed);
    const std::size_t hidden = 4 * config_.base_channels;
    auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k) {
        return Conv{uniform_init({cout, cin, k, k}, cin * k * k, rng), zeros({cout})};
    };
    auto block = [&](std::size_t cin, std::size_t cout) {
        Block b;
        b.first = conv(cin, cout, 3);
        b.second = conv(cout, cout, 3);
        if (config_.time_conditioned) {
            b.scale = Linear{uniform_init({hidden, cout}, hidden, rng), zeros({cout})};
            b.shift = Linear{uniform_init({hidden, cout}, hidden, rng), zeros({cout})};
        }
        return b;
    };

    if (config_.time_conditioned) {
        time_hidden_ = Linear{uniform_init({config_.time_dim, hidden}, config_.time_dim, rng), zeros({hidden})};
    }
    const std::size_t in = config_.cond_channels + (config_.time_conditioned ? 1 : 0);
    std::size_t prev = in;
    for (std::size_t l = 0; l < config_.levels; ++l) {
        const std::size_t c = config_.base_channels << l;
        down_.push_back(block(prev, c));
        prev = c;
    }
    bottom_ = block(prev, config_.base_channels << config_.levels);
    prev = config_.base_channels << config_.levels;
    for (std::size_t l = config_.levels; l-- > 0;) {
        const std::size_t c = config_.base_channels << l;
        up_.push_back(block(prev + c, c));
        prev = c;
    }
    head_ = Conv{zeros({1, prev, 1, 1}), zeros({1})};
}

void UNetLite::check_input(const Tensor &y, std::size_t expected_cond) const {
    if (y.rank() != 4 || y.dim(1) != expected_cond) {
        throw ShapeError("unet: expected conditioning [N," + std::to_string(expected_cond) + ",H,W], got " +
                         shape_str(y.shape()));
    }
    const std::size_t m = size_multiple();
    if (y.dim(2) % m || y.dim(3) % m) {
        throw ShapeError("unet: spatial extents of " + shape_str(y.shape()) + " must be divisible by " +
                         std::to_string(m));
    }
}

Tensor UNetLite::run_block(const Block &b, const Tensor &x, const Tensor *temb) const {
    Tensor h = ops::conv2d(x, b.first.weight, b.first.bias);
    if (temb) {
        Tensor s = linear(*temb, b.scale.weight, b.scale.bias);
        Tensor t = linear(*temb, b.shift.weight, b.shift.bias);
        h = ops::affine_scale_shift(h, s, t);
    }
    h = ops::silu(h);
    return ops::silu(ops::conv2d(h, b.second.weight, b.second.bias));
}

Tensor UNetLite::run(const Tensor &input, const Tensor *temb) const {
    std::vector<Tensor> skips;
    Tensor h = input;
    for (const auto &b : down_) {
        h = run_block(b, h, temb);
        skips.push_back(h);
        h = ops::downsample2x(h);
    }
    h = run_block(bottom_, h, temb);
    for (const auto &b : up_) {
        h = ops::concat_channels(ops::upsample2x(h), skips.back());
        skips.pop_back();
        h = run_block(b, h, temb);
    }
    return ops::conv2d(h, head_.weight, head_.bias);
}

Tensor UNetLite::forward_e2e(const Tensor &y) const {
    if (config_.time_conditioned) throw std::logic_error("unet: forward_e2e on a time-conditioned network");
    check_input(y, config_.cond_channels);
    return run(y, nullptr);
}

Tensor UNetLite::forward_conditional(const Tensor &x_t, const Tensor &y, std::span<const float> t) const {
    if (!config_.time_conditioned) throw std::logic_error("unet: forward_conditional on an unconditioned network");
    check_input(y, config_.cond_channels);
    if (x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.dim(0) != y.dim(0) || x_t.dim(2) != y.dim(2) || x_t.dim(3) != y.dim(3)) {
        throw ShapeError("unet: x_t " + shape_str(x_t.shape()) + " does not match conditioning " + shape_str(y.shape()));
    }
    if (t.size() != y.dim(0)) throw ShapeError("unet: need one time per sample");
    for (float v : t) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::out_of_range("unet: time " + std::to_string(v) + " outside [0, 1]");
    }
    Tensor emb = time_embedding(t, config_.time_dim);
    Tensor temb = ops::silu(linear(emb, time_hidden_.weight, time_hidden_.bias));
    return run(ops::concat_channels(x_t, y), &temb);
}

NamedParams UNetLite::named_parameters() const {
    NamedParams out;
    auto add_block = [&](const std::string &prefix, const Block &b) {
        out.emplace_back(prefix + ".conv1.weight", b.first.weight);
        out.emplace_back(prefix + ".conv1.bias", b.first.bias);
        out.emplace_back(prefix + ".conv2.weight", b.second.weight);
        out.emplace_back(prefix + ".conv2.bias", b.second.bias);
        if (config_.time_conditioned) {
            out.emplace_back(prefix + ".scale.weight", b.scale.weight);
            out.emplace_back(prefix + ".scale.bias", b.scale.bias);
            out.emplace_back(prefix + ".shift.weight", b.shift.weight);
            out.emplace_back(prefix + ".shift.bias", b.shift.bias);
        }
    };
    if (config_.time_conditioned) {
        out.emplace_back("time.weight", time_hidden_.weight);
        out.emplace_back("time.bias", time_hidden_.bias);
    }
    for (std::size_t i = 0; i < down_.size(); ++i) add_block("down" + std::to_string(i), down_[i]);
    add_block("bottom", bottom_);
    for (std::size_t i = 0; i < up_.size(); ++i) add_block("up" + std::to_string(i), up_[i]);
    out.emplace_back("head.weight", head_.weight);
    out.emplace_back("head.bias", head_.bias);
    return out;
}

std::vector<Tensor> UNetLite::parameters() const {
    std::vector<Tensor> out;
    for (auto &[_, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t UNetLite::parameter_count() const {
    std::size_t n = 0;
    for (auto &[_, t] : named_parameters()) n += t.size();
    return n;
}

MlpField::MlpField(MlpConfig config) : config_(config) {
    if (config_.layers < 1 || config_.hidden == 0) throw std::invalid_argument("mlp: need at least one hidden layer");
    Rng rng(config_.seed);
    std::size_t prev = config_.data_dim + config_.cond_dim + config_.time_dim;
    for (std::size_t l = 0; l < config_.layers; ++l) {
        layers_.emplace_back(uniform_init({prev, config_.hidden}, prev, rng), zeros({config_.hidden}));
        prev = config_.hidden;
    }
    layers_.emplace_back(zeros({prev, config_.data_dim}), zeros({config_.data_dim}));
}

Tensor MlpField::field(const Tensor &x_t, const Tensor &y, std::span<const float> t) const {
    const std::size_t n = x_t.dim(0);
    if (x_t.shape() != Shape{n, config_.data_dim} || y.shape() != Shape{n, config_.cond_dim} || t.size() != n) {
        throw ShapeError("mlp: expected x_t [N," + std::to_string(config_.data_dim) + "], y [N," +
                         std::to_string(config_.cond_dim) + "], got " + shape_str(x_t.shape()) + ", " +
                         shape_str(y.shape()));
    }
    Tensor h = ops::concat_channels(ops::concat_channels(x_t, y), time_embedding(t, config_.time_dim));
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h = ops::silu(linear(h, layers_[l].first, layers_[l].second));
    return linear(h, layers_.back().first, layers_.back().second);
}

NamedParams MlpField::named_parameters() const {
    NamedParams out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        out.emplace_back("fc" + std::to_string(l) + ".weight", layers_[l].first);
        out.emplace_back("fc" + std::to_string(l) + ".bias", layers_[l].second);
    }
    return out;
}

std::vector<Tensor> MlpField::parameters() const {
    std::vector<Tensor> out;
    for (auto &[w, b] : layers_) {
        out.push_back(w);
        out.push_back(b);
    }
    return out;
}

void save_checkpoint(const std::filesystem::path &stem, const NamedParams &params, const nlohmann::json &meta) {
    std::vector<float> flat;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto &[name, t] : params) {
        flat.insert(flat.end(), t.data().begin(), t.data().end());
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
    }
    nlohmann::json header = meta;
    header["tensors"] = tensors;
    header["parameter_count"] = flat.size();
    const std::size_t count = flat.size();
    io::write_vct(std::filesystem::path(stem).concat(".vct"), Tensor({count}, std::move(flat)));
    io::write_text(std::filesystem::path(stem).concat(".json"), header.dump(2) + "\n");
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path &stem) {
    return nlohmann::json::parse(io::read_text(std::filesystem::path(stem).concat(".json")));
}

nlohmann::json load_checkpoint(const std::filesystem::path &stem, const NamedParams &params) {
    nlohmann::json header = read_checkpoint_meta(stem);
    Tensor flat = io::read_vct(std::filesystem::path(stem).concat(".vct"));
    const auto &tensors = header.at("tensors");
    if (tensors.size() != params.size()) throw std::runtime_error("checkpoint: parameter list does not match network");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto &[name, t] = params[i];
        if (tensors[i].at("name") != name || tensors[i].at("shape").get<Shape>() != t.shape()) {
            throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is " + tensors[i].dump() +
                                     ", network expects " + name + " " + shape_str(t.shape()));
        }
        if (offset + t.size() > flat.size()) throw std::runtime_error("checkpoint: payload too short");
        Tensor dst = t;
        std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(offset), t.size(), dst.data().begin());
        offset += t.size();
    }
    if (offset != flat.size()) throw std::runtime_error("checkpoint: payload has trailing values");
    header.erase("tensors");
    return header;
}

}  // namespace clab
