#include "clab/run_config.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

#include "clab/io.hpp"

namespace clab {

namespace {

void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> known, const std::string &where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
    for (const auto &[key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char *k) { return key == k; }))
            throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
}

}  // namespace

RunConfig::RunConfig() : thresholds(30) { std::iota(thresholds.begin(), thresholds.end(), 1); }

UNetConfig RunConfig::unet(ModelRole role, Modality m) const {
    UNetConfig u;
    u.levels = net.levels;
    u.base_channels = net.base_channels;
    u.time_dim = net.time_dim;
    u.time_conditioned = role != ModelRole::E2E;
    u.seed = derived_seed(seed, SeedStream::NetInit, role, m);
    return u;
}

void to_json(nlohmann::json &j, const RunConfig &c) {
    nlohmann::json recipe = c.phantom;
    recipe.erase("modality");
    recipe.erase("seed");
    nlohmann::json train = c.train;
    train.erase("seed");
    nlohmann::json sampler = c.sampler;
    sampler.erase("seed");
    j = nlohmann::json{{"name", c.name},
                       {"output_dir", c.output_dir},
                       {"seed", c.seed},
                       {"model", to_string(c.model)},
                       {"modality", to_string(c.modality)},
                       {"phantom", recipe},
                       {"split", c.split},
                       {"net", {{"levels", c.net.levels}, {"base_channels", c.net.base_channels}, {"time_dim", c.net.time_dim}}},
                       {"train", train},
                       {"schedule", c.schedule},
                       {"sampler", sampler},
                       {"thresholds", c.thresholds}};
}

void from_json(const nlohmann::json &j, RunConfig &c) {
    reject_unknown(j, {"name", "output_dir", "seed", "model", "modality", "phantom", "split", "net", "train", "schedule",
                       "sampler", "thresholds"},
                   "config");
    RunConfig d;
    c.name = j.value("name", d.name);
    c.output_dir = j.value("output_dir", d.output_dir);
    c.seed = j.value("seed", d.seed);
    c.model = model_role_from_string(j.value("model", to_string(d.model)));
    c.modality = modality_from_string(j.value("modality", to_string(d.modality)));
    if (c.name.empty() || c.name.find('/') != std::string::npos) throw std::invalid_argument("config: invalid run name '" + c.name + "'");

    if (j.contains("phantom")) {
        const auto &p = j.at("phantom");
        if (p.contains("modality") || p.contains("seed"))
            throw std::invalid_argument("config.phantom: modality and seed are set per volume by the run");
        c.phantom = p.get<PhantomRecipe>();
    } else {
        c.phantom = d.phantom;
    }
    c.split = j.contains("split") ? j.at("split").get<dataset::SplitConfig>() : d.split;
    if (j.contains("net")) {
        const auto &n = j.at("net");
        reject_unknown(n, {"levels", "base_channels", "time_dim"}, "config.net");
        c.net.levels = n.value("levels", d.net.levels);
        c.net.base_channels = n.value("base_channels", d.net.base_channels);
        c.net.time_dim = n.value("time_dim", d.net.time_dim);
    } else {
        c.net = d.net;
    }
    if (j.contains("train") && j.at("train").contains("seed")) throw std::invalid_argument("config.train: seed is derived from the run seed");
    if (j.contains("sampler") && j.at("sampler").contains("seed")) throw std::invalid_argument("config.sampler: seed is derived from the run seed");
    c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
    c.schedule = j.contains("schedule") ? j.at("schedule").get<ScheduleConfig>() : d.schedule;
    c.sampler = j.contains("sampler") ? j.at("sampler").get<SamplerConfig>() : d.sampler;
    c.thresholds = j.contains("thresholds") ? j.at("thresholds").get<std::vector<int>>() : d.thresholds;
    for (int t : c.thresholds) {
        if (t < 1 || t > 30) throw std::invalid_argument("config.thresholds: " + std::to_string(t) + " outside 1..30");
    }
    c.phantom.validate();
}

RunConfig load_run_config(const std::filesystem::path &path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error &e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return j.get<RunConfig>();
}

void apply_override(nlohmann::json &doc, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &) {
        value = text;
    }
    nlohmann::json *node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        nlohmann::json &next = (*node)[parts[i]];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) throw std::invalid_argument("override '" + assignment + "': " + parts[i] + " is not a section");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

std::uint64_t derived_seed(std::uint64_t master, SeedStream stream, ModelRole role, Modality modality) {
    const std::uint64_t base = split_seed(master, static_cast<std::uint64_t>(stream));
    if (stream == SeedStream::Phantom) return base;
    return split_seed(base, 16 * static_cast<std::uint64_t>(role) + static_cast<std::uint64_t>(modality));
}

}  // namespace clab
