#include "clab/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "clab/errors.hpp"
#include "clab/io.hpp"
#include "clab/report.hpp"
#include "clab/run_config.hpp"

#ifndef CLAB_VERSION
#define CLAB_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace clab::cli {

namespace {

// Raised for problems the user fixes in the config or on the command line.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

bool g_quiet = false;

std::ostream &sink() {
    static std::ostringstream s;
    s.str("");
    return s;
}
std::ostream &progress() { return g_quiet ? sink() : std::cerr; }
std::ostream &say() { return g_quiet ? sink() : std::cout; }

struct Common {
    std::string config_path;
    std::string name, out;
    std::vector<std::string> sets;
    std::int64_t seed = -1;
};

struct Layout {
    fs::path root;
    fs::path data() const { return root / "data"; }
    fs::path volume(std::size_t v) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "vol_%03zu", v);
        return data() / buf;
    }
    fs::path checkpoint(ModelRole r, Modality m) const { return root / "checkpoints" / (to_string(r) + "_" + to_string(m)); }
    fs::path samples(ModelRole r, Modality m) const { return root / "samples" / (to_string(r) + "_" + to_string(m)); }
    fs::path reports() const { return root / "reports"; }
};

std::string slice_tag(const SlicePair &p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%03zu_s%02zu", p.volume_id, p.slice_index);
    return buf;
}

RunConfig resolve(const Common &c) {
    nlohmann::json doc;
    if (!c.config_path.empty()) {
        try {
            doc = nlohmann::json::parse(io::read_text(c.config_path));
        } catch (const nlohmann::json::parse_error &e) {
            throw ConfigError("config " + c.config_path + ": " + e.what());
        } catch (const std::runtime_error &e) {
            throw ConfigError(e.what());
        }
    } else {
        doc = nlohmann::json::object();
    }
    try {
        for (const auto &s : c.sets) apply_override(doc, s);
        if (!c.name.empty()) doc["name"] = c.name;
        if (!c.out.empty()) doc["output_dir"] = c.out;
        if (c.seed >= 0) doc["seed"] = c.seed;
        return doc.get<RunConfig>();
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
}

void append_manifest(const Layout &lay, const std::string &command, const std::vector<std::string> &args,
                     const RunConfig &cfg, double seconds) {
    fs::create_directories(lay.root);
    const fs::path path = lay.root / "manifest.json";
    nlohmann::json m = nlohmann::json::object();
    if (fs::exists(path)) m = nlohmann::json::parse(io::read_text(path));
    nlohmann::json argv = nlohmann::json::array({"clab"});
    for (const auto &a : args) argv.push_back(a);
    m["runs"].push_back({{"command", command},
                         {"argv", argv},
                         {"config", cfg},
                         {"seed", cfg.seed},
                         {"version", CLAB_VERSION},
                         {"compiler", __VERSION__},
                         {"wall_time_s", seconds}});
    io::write_text(path, m.dump(2) + "\n");
}

dataset::Split read_split(const Layout &lay) {
    const fs::path p = lay.data() / "dataset.json";
    if (!fs::exists(p)) throw std::runtime_error("no dataset at " + lay.data().string() + " (run 'clab gen' first)");
    return nlohmann::json::parse(io::read_text(p)).at("split").get<dataset::Split>();
}

PhantomVolume load_volume(const Layout &lay, std::size_t v, Modality m) {
    const fs::path dir = lay.volume(v);
    PhantomVolume vol;
    vol.pre = io::read_vct(dir / (to_string(m) + "_pre.vct"));
    vol.post = io::read_vct(dir / (to_string(m) + "_post.vct"));
    vol.roi = io::read_vct(dir / "roi.vct");
    vol.modality = m;
    return vol;
}

std::vector<SlicePair> load_pairs(const Layout &lay, const std::vector<std::size_t> &ids, Modality m) {
    std::vector<SlicePair> out;
    for (std::size_t v : ids) {
        auto pairs = dataset::extract_pairs(load_volume(lay, v, m), v);
        out.insert(out.end(), pairs.begin(), pairs.end());
    }
    return out;
}

std::vector<SlicePair> load_test_slices(const Layout &lay, const RunConfig &cfg, Modality m) {
    std::vector<SlicePair> out;
    for (std::size_t v : read_split(lay).test) {
        auto sel = dataset::select_test_slices(dataset::extract_pairs(load_volume(lay, v, m), v), cfg.split.test_slice_stride);
        out.insert(out.end(), sel.begin(), sel.end());
    }
    if (out.empty()) throw std::runtime_error("no test slices intersect a tumor ROI");
    return out;
}

UNetLite load_net(const fs::path &stem, ModelRole expected, Modality m) {
    if (!fs::exists(fs::path(stem).concat(".json"))) throw std::runtime_error("missing checkpoint " + stem.string());
    nlohmann::json meta = read_checkpoint_meta(stem);
    if (meta.at("role") != to_string(expected) || meta.at("modality") != to_string(m)) {
        throw ConfigError("checkpoint " + stem.string() + " is " + meta.at("role").get<std::string>() + "/" +
                          meta.at("modality").get<std::string>());
    }
    UNetLite net(meta.at("net").get<UNetConfig>());
    load_checkpoint(stem, net.named_parameters());
    return net;
}

void cmd_gen(const RunConfig &cfg, const Layout &lay) {
    const auto split = dataset::make_split(cfg.split);
    const std::size_t total = cfg.split.train + cfg.split.validation + cfg.split.test;
    const std::uint64_t stream = derived_seed(cfg.seed, SeedStream::Phantom);
    nlohmann::json volumes = nlohmann::json::array();
    for (std::size_t v = 0; v < total; ++v) {
        const std::uint64_t seed = split_seed(stream, v);
        auto [t1, t1w] = phantom::paired_modalities(seed, cfg.phantom);
        const fs::path dir = lay.volume(v);
        fs::create_directories(dir);
        for (const PhantomVolume *vol : {&t1, &t1w}) {
            const std::string m = to_string(vol->modality);
            io::write_vct(dir / (m + "_pre.vct"), vol->pre);
            io::write_vct(dir / (m + "_post.vct"), vol->post);
            io::write_text(dir / (m + ".json"), phantom::sidecar(*vol, cfg.phantom).dump(2) + "\n");
        }
        io::write_vct(dir / "roi.vct", t1.roi);
        volumes.push_back({{"id", v}, {"seed", seed}, {"path", dir.filename().string()}});
    }
    nlohmann::json recipe = cfg.phantom;
    recipe.erase("modality");
    recipe.erase("seed");
    nlohmann::json ds{{"recipe", recipe}, {"split", split}, {"volumes", volumes}, {"layout", "DHW"}};
    io::write_text(lay.data() / "dataset.json", ds.dump(2) + "\n");
    say() << "generated " << total << " volumes in " << lay.data().string() << "\n";
}

void cmd_train(const RunConfig &cfg, const Layout &lay, ModelRole role, Modality m) {
    const auto split = read_split(lay);
    auto pairs = load_pairs(lay, split.train, m);
    UNetLite net(cfg.unet(role, m));
    TrainConfig tc = cfg.train;
    tc.seed = derived_seed(cfg.seed, SeedStream::Training, role, m);
    const NoiseSchedule schedule(cfg.schedule.steps, cfg.schedule.alpha_first, cfg.schedule.alpha_last);
    std::ostringstream log;
    log << "epoch,loss\n";
    auto history = train_model(role, net, pairs, tc, schedule, [&](std::size_t epoch, double loss) {
        log << epoch << ',' << report::fmt(loss) << '\n';
        if (epoch % 10 == 0 || epoch == tc.epochs) progress() << to_string(role) << " epoch " << epoch << " loss " << loss << "\n";
        return true;
    });
    fs::create_directories(lay.checkpoint(role, m).parent_path());
    fs::create_directories(lay.reports());
    nlohmann::json meta{{"role", to_string(role)},
                        {"modality", to_string(m)},
                        {"epoch", history.size()},
                        {"net", net.config()},
                        {"train", cfg.train},
                        {"schedule", cfg.schedule},
                        {"final_loss", history.empty() ? nlohmann::json(nullptr) : nlohmann::json(history.back())}};
    save_checkpoint(lay.checkpoint(role, m), net.named_parameters(), meta);
    io::write_text(lay.reports() / ("loss_" + to_string(role) + "_" + to_string(m) + ".csv"), log.str());
    say() << "trained " << to_string(role) << "/" << to_string(m) << " for " << history.size() << " epochs on "
              << pairs.size() << " slices\n";
}

void cmd_sample(const RunConfig &cfg, const Layout &lay, ModelRole role, Modality m, const std::string &checkpoint) {
    if (role == ModelRole::E2E) throw ConfigError("sample: the e2e model is deterministic; use eval");
    const fs::path stem = checkpoint.empty() ? lay.checkpoint(role, m) : fs::path(checkpoint);
    UNetLite net = load_net(stem, role, m);
    const NoiseSchedule schedule(cfg.schedule.steps, cfg.schedule.alpha_first, cfg.schedule.alpha_last);
    auto slices = load_test_slices(lay, cfg, m);
    const fs::path dir = lay.samples(role, m);
    fs::create_directories(dir);
    fs::create_directories(lay.reports());
    const std::uint64_t stream = derived_seed(cfg.seed, SeedStream::Sampling, role, m);
    std::ostringstream steps;
    steps << "volume,slice,sample,accepted,rejected,rhs_evals\n";
    for (std::size_t k = 0; k < slices.size(); ++k) {
        std::vector<StepStats> stats;
        auto ens = sample_posterior(role, net, schedule, slices[k], cfg.sampler, split_seed(stream, k), &stats);
        const std::string tag = slice_tag(slices[k]);
        io::write_vct(dir / (tag + "_samples.vct"), ens.samples);
        io::write_vct(dir / (tag + "_mean.vct"), ens.mean);
        io::write_vct(dir / (tag + "_std.vct"), ens.stddev);
        io::write_pgm(dir / (tag + "_std.pgm"), ens.stddev);
        Tensor mag(ens.mean.shape());
        for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(ens.mean[i]);
        io::write_pgm(dir / (tag + "_mean_abs.pgm"), mag);
        for (std::size_t s = 0; s < stats.size(); ++s) {
            steps << slices[k].volume_id << ',' << slices[k].slice_index << ',' << s << ',' << stats[s].accepted << ','
                  << stats[s].rejected << ',' << stats[s].rhs_evals << '\n';
        }
        progress() << to_string(role) << " sampled " << tag << " (" << k + 1 << "/" << slices.size() << ")\n";
    }
    if (role == ModelRole::FM) io::write_text(lay.reports() / ("steps_fm_" + to_string(m) + ".csv"), steps.str());
    say() << "sampled " << cfg.sampler.ensemble << " x " << slices.size() << " slices into " << dir.string() << "\n";
}

void cmd_eval(const RunConfig &cfg, const Layout &lay, Modality m) {
    auto slices = load_test_slices(lay, cfg, m);
    std::vector<report::Predictions> preds{report::pre_contrast(slices)};
    const NoiseSchedule schedule(cfg.schedule.steps, cfg.schedule.alpha_first, cfg.schedule.alpha_last);
    if (fs::exists(fs::path(lay.checkpoint(ModelRole::E2E, m)).concat(".json"))) {
        UNetLite net = load_net(lay.checkpoint(ModelRole::E2E, m), ModelRole::E2E, m);
        std::vector<Tensor> diffs;
        for (const auto &p : slices) diffs.push_back(predict_e2e(net, p));
        preds.push_back(report::from_differences("e2e", slices, diffs));
    }
    for (ModelRole role : {ModelRole::DM, ModelRole::FM}) {
        const fs::path dir = lay.samples(role, m);
        if (!fs::exists(dir)) continue;
        std::vector<Tensor> means, stds;
        for (const auto &p : slices) {
            means.push_back(io::read_vct(dir / (slice_tag(p) + "_mean.vct")));
            stds.push_back(io::read_vct(dir / (slice_tag(p) + "_std.vct")));
        }
        preds.push_back(report::from_differences(to_string(role), slices, means, stds));
    }

    std::vector<report::SliceScore> all;
    std::vector<report::Summary> summary;
    std::vector<report::UncertaintyRow> unc;
    std::vector<report::SegmentationRow> seg;
    for (const auto &p : preds) {
        auto scores = report::score_slices(slices, p);
        all.insert(all.end(), scores.begin(), scores.end());
        summary.push_back(report::summarize(scores));
        if (!p.stddev.empty()) {
            unc.push_back(report::uncertainty(slices, p, false));
            unc.push_back(report::uncertainty(slices, p, true));
        }
        auto rows = report::segmentation(slices, p, cfg.thresholds);
        seg.insert(seg.end(), rows.begin(), rows.end());
    }
    fs::create_directories(lay.reports());
    const std::string suffix = "_" + to_string(m) + ".csv";
    io::write_text(lay.reports() / ("slices" + suffix), report::csv(all));
    io::write_text(lay.reports() / ("summary" + suffix), report::csv(summary));
    io::write_text(lay.reports() / ("uncertainty" + suffix), report::csv(unc));
    io::write_text(lay.reports() / ("segmentation" + suffix), report::csv(seg));
    say() << report::csv(summary);
}

std::vector<report::SegmentationRow> read_segmentation(const fs::path &path) {
    std::vector<report::SegmentationRow> rows;
    std::istringstream in(io::read_text(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 4) throw io::FormatError("malformed row in " + path.string() + ": " + line);
        rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3])});
    }
    return rows;
}

std::string sweep_svg(const std::vector<std::pair<std::string, std::vector<report::SegmentationRow>>> &series) {
    const double W = 420, H = 300, L = 50, R = 15, T = 30, B = 40;
    const std::map<std::string, std::string> colors{{"pre", "#7f7f7f"}, {"e2e", "#2ca02c"}, {"dm", "#d62728"},
                                                     {"fm", "#1f77b4"}};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int panel = 0; panel < 2; ++panel) {
        const double ox = panel * W;
        auto px = [&](double t) { return ox + L + (t - 1.0) / 29.0 * (W - L - R); };
        auto py = [&](double v) { return T + (1.0 - v) * (H - T - B); };
        os << "<text x=\"" << ox + W / 2 << "\" y=\"18\" text-anchor=\"middle\">" << (panel == 0 ? "Dice" : "Jaccard") << "</text>\n";
        os << "<rect x=\"" << ox + L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
           << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (int k = 0; k <= 4; ++k) {
            const double v = k / 4.0;
            os << "<text x=\"" << ox + L - 5 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
        }
        for (int t : {1, 10, 20, 30}) {
            os << "<text x=\"" << px(t) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">" << t << "%</text>\n";
        }
        os << "<text x=\"" << ox + W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">threshold</text>\n";
        for (const auto &[label, rows] : series) {
            const std::string model = rows.front().model;
            const auto c = colors.count(model) ? colors.at(model) : std::string("#9467bd");
            const bool dashed = label.find("T1w") == std::string::npos;
            os << "<polyline fill=\"none\" stroke=\"" << c << "\"" << (dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
            for (const auto &r : rows) os << px(r.threshold) << ',' << py(panel == 0 ? r.dice : r.jaccard) << ' ';
            os << "\"><title>" << label << "</title></polyline>\n";
        }
    }
    double y = T + 12;
    for (const auto &[label, rows] : series) {
        os << "<text x=\"" << 2 * W - R - 5 << "\" y=\"" << y << "\" text-anchor=\"end\">" << label << "</text>\n";
        y += 13;
    }
    os << "</svg>\n";
    return os.str();
}

void cmd_sweep(const RunConfig &cfg, const Layout &lay) {
    std::vector<std::pair<std::string, std::vector<report::SegmentationRow>>> series;
    std::ostringstream csv;
    csv << "series,modality,model,threshold,dice,jaccard\n";
    auto add = [&](const std::string &modality, const std::vector<report::SegmentationRow> &rows) {
        std::map<std::string, std::vector<report::SegmentationRow>> by_model;
        std::vector<std::string> order;
        for (const auto &r : rows) {
            if (!by_model.count(r.model)) order.push_back(r.model);
            by_model[r.model].push_back(r);
        }
        for (const auto &model : order) {
            const std::string label = model + "_" + modality;
            for (const auto &r : by_model[model])
                csv << label << ',' << modality << ',' << model << ',' << r.threshold << ',' << report::fmt(r.dice) << ','
                    << report::fmt(r.jaccard) << '\n';
            series.emplace_back(label, by_model[model]);
        }
    };
    bool any = false;
    for (Modality m : {Modality::T1, Modality::T1w}) {
        const fs::path p = lay.reports() / ("segmentation_" + to_string(m) + ".csv");
        if (!fs::exists(p)) continue;
        add(to_string(m), read_segmentation(p));
        any = true;
    }
    if (!any) throw std::runtime_error("sweep: no segmentation reports in " + lay.reports().string() + " (run 'clab eval' first)");
    add("both", report::cross_modality(load_test_slices(lay, cfg, Modality::T1), load_test_slices(lay, cfg, Modality::T1w),
                                       cfg.thresholds));
    io::write_text(lay.reports() / "sweep.csv", csv.str());
    io::write_text(lay.reports() / "sweep.svg", sweep_svg(series));
    say() << "wrote " << (lay.reports() / "sweep.csv").string() << " and sweep.svg\n";
}

void add_common(CLI::App *sub, Common &c) {
    sub->add_option("-c,--config", c.config_path, "JSON run config");
    sub->add_option("--name", c.name, "run name (overrides config)");
    sub->add_option("--out", c.out, "output directory (overrides config)");
    sub->add_option("--seed", c.seed, "master seed (overrides config)")->check(CLI::NonNegativeNumber);
    sub->add_flag("-q,--quiet", g_quiet, "no progress output");
    sub->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5");
}

}  // namespace

int run(const std::vector<std::string> &args) {
    g_quiet = false;
    CLI::App app{"Virtual contrast enhancement lab", "clab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CLAB_VERSION);
    Common common;
    std::string model, modality, checkpoint;
    std::int64_t epochs = -1, ensemble = -1;

    auto *gen = app.add_subcommand("gen", "generate paired phantom volumes in both modalities");
    auto *train = app.add_subcommand("train", "train one model on one modality");
    auto *sample = app.add_subcommand("sample", "draw posterior ensembles for the test slices");
    auto *eval = app.add_subcommand("eval", "score all available models on the test slices");
    auto *sweep = app.add_subcommand("sweep", "threshold sweep CSV and SVG across modalities");
    for (auto *s : {gen, train, sample, eval, sweep}) add_common(s, common);
    for (auto *s : {train, sample}) {
        s->add_option("--model", model, "e2e, dm or fm");
        s->add_option("--modality", modality, "T1 or T1w");
    }
    eval->add_option("--modality", modality, "T1 or T1w");
    train->add_option("--epochs", epochs, "epochs (overrides config)")->check(CLI::NonNegativeNumber);
    sample->add_option("--checkpoint", checkpoint, "checkpoint stem (default: the run's)");
    sample->add_option("--ensemble", ensemble, "samples per slice (overrides config)")->check(CLI::PositiveNumber);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        if (!model.empty()) common.sets.push_back("model=\"" + model + "\"");
        if (!modality.empty()) common.sets.push_back("modality=\"" + modality + "\"");
        if (epochs >= 0) common.sets.push_back("train.epochs=" + std::to_string(epochs));
        if (ensemble >= 0) common.sets.push_back("sampler.ensemble=" + std::to_string(ensemble));
        const RunConfig cfg = resolve(common);
        const Layout lay{cfg.run_dir()};
        std::string command;
        if (*gen) {
            command = "gen";
            cmd_gen(cfg, lay);
        } else if (*train) {
            command = "train";
            cmd_train(cfg, lay, cfg.model, cfg.modality);
        } else if (*sample) {
            command = "sample";
            cmd_sample(cfg, lay, cfg.model, cfg.modality, checkpoint);
        } else if (*eval) {
            command = "eval";
            cmd_eval(cfg, lay, cfg.modality);
        } else {
            command = "sweep";
            cmd_sweep(cfg, lay);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        append_manifest(lay, command, args, cfg, secs);
        return 0;
    } catch (const NumericError &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument &e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace clab::cli
