// Acceptance run: one PASS/FAIL line per criterion.
//
//   clab_acceptance [--workdir DIR] [N ...]
//
// With no numbers every criterion runs. Criteria 6 and 7 share one pipeline
// run on the desk-scale config (configs/desk.json).

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "clab/adam.hpp"
#include "clab/cli.hpp"
#include "clab/diffusion.hpp"
#include "clab/flowmatch.hpp"
#include "clab/io.hpp"
#include "clab/metrics.hpp"
#include "clab/report.hpp"
#include "clab/run_config.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"

#ifndef CLAB_SOURCE_DIR
#define CLAB_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;
using namespace clab;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

fs::path g_workdir = fs::temp_directory_path() / "clab_acceptance";

// 1 ------------------------------------------------------------------------

Outcome autodiff() {
    const auto t0 = clock_type::now();
    Rng rng(20240601);
    std::map<std::string, std::pair<int, double>> per_kind;  // instances, worst error
    for (int trial = 0; trial < 20; ++trial) {
        for (auto &c : testing::random_cases(rng)) {
            auto rep = testing::gradient_check(c, rng);
            auto &[count, worst] = per_kind[c.name];
            ++count;
            worst = std::max(worst, rep.rel_error);
        }
    }
    const double secs = seconds_since(t0);
    bool ok = secs < 60.0;
    double worst = 0.0;
    int fewest = 1 << 30;
    std::string bad;
    for (const auto &[name, v] : per_kind) {
        fewest = std::min(fewest, v.first);
        worst = std::max(worst, v.second);
        if (v.second > 1e-3 || v.first < 20) {
            ok = false;
            bad += " " + name;
        }
    }
    return {ok, format("%zu op kinds x >= %d instances, worst rel err %.2e, %.1f s%s%s", per_kind.size(), fewest, worst,
                       secs, bad.empty() ? "" : ", failing:", bad.c_str())};
}

// 2 ------------------------------------------------------------------------

OdeProblem growth() {
    OdeProblem p;
    p.rhs = [](double, std::span<const double> x, std::span<double> dx) { dx[0] = x[0]; };
    p.x0 = {1.0};
    return p;
}

Outcome dopri_order() {
    const auto p = growth();
    std::vector<double> lh, le;
    for (std::size_t n : {10, 20, 40, 80}) {
        lh.push_back(std::log(1.0 / static_cast<double>(n)));
        le.push_back(std::log(std::abs(dopri5_fixed(p, n).x[0] - std::exp(1.0))));
    }
    const double mh = std::accumulate(lh.begin(), lh.end(), 0.0) / 4, me = std::accumulate(le.begin(), le.end(), 0.0) / 4;
    double sxy = 0.0, sxx = 0.0;
    for (int i = 0; i < 4; ++i) {
        sxy += (lh[i] - mh) * (le[i] - me);
        sxx += (lh[i] - mh) * (lh[i] - mh);
    }
    const double slope = sxy / sxx;
    const auto r = dopri5(p);
    const double rel = std::abs(r.x[0] - std::exp(1.0)) / std::exp(1.0);
    return {slope >= 4.5 && slope <= 5.5 && rel <= 1e-6,
            format("exponent %.3f (n = 10..80), adaptive x(1) rel err %.2e in %zu steps", slope, rel, r.accepted)};
}

// 3 ------------------------------------------------------------------------

Outcome diffusion_oracle() {
    const double mu = 1.5, sigma = 0.5;
    const std::size_t n = 10000;
    NoiseSchedule s;
    Tensor x = diffusion::reverse_sample_score(s, diffusion::gaussian_score(s, mu, sigma), {n, 1}, 31337, s.steps());
    double m = 0.0;
    for (float v : x.data()) m += v;
    m /= static_cast<double>(n);
    double var = 0.0;
    for (float v : x.data()) var += (v - m) * (v - m);
    var /= static_cast<double>(n - 1);
    const double se = sigma / std::sqrt(static_cast<double>(n));
    const double z = (m - mu) / se, rv = var / (sigma * sigma) - 1.0;
    return {std::abs(z) <= 3.0 && std::abs(rv) <= 0.1,
            format("N(%.1f, %.2f): mean %.4f (%.2f SE), var %.4f (%+.1f%%), %zu draws, T = %zu", mu, sigma * sigma, m, z, var,
                   100.0 * rv, n, s.steps())};
}

// 4 ------------------------------------------------------------------------

Outcome schedule() {
    NoiseSchedule s(2000, 1e-3, 5e-2);
    const bool ends = s.alpha(1) == 1e-3 && s.alpha(2000) == 5e-2;
    const double step = (5e-2 - 1e-3) / 1999.0;
    const double ulp = std::nextafter(5e-2, 1.0) - 5e-2;
    double worst = 0.0;
    bool positive = true;
    for (std::size_t t = 1; t < 2000; ++t) {
        const double inc = s.alpha(t + 1) - s.alpha(t);
        positive = positive && inc > 0.0;
        worst = std::max(worst, std::abs(inc - step));
    }
    return {ends && positive && worst <= 8.0 * ulp,
            format("alpha_1 %s 1e-3, alpha_2000 %s 5e-2 (bitwise); increments within %.1f ulp of %.6e", s.alpha(1) == 1e-3 ? "==" : "!=",
                   s.alpha(2000) == 5e-2 ? "==" : "!=", worst / ulp, step)};
}

// 5 ------------------------------------------------------------------------

// Two modes per condition c in [-1, 1]: (c, 0.5) and (-c, -0.5), spread 0.08.
constexpr double kToySigma = 0.08;

std::pair<std::array<double, 2>, std::array<double, 2>> toy_modes(double c) { return {{{c, 0.5}}, {{-c, -0.5}}}; }

Outcome fm_toy() {
    // Endpoints of the interpolation path.
    Rng erng(5);
    Tensor z({64, 3}), xd({64, 3});
    for (auto &v : z.data()) v = static_cast<float>(erng.normal());
    for (auto &v : xd.data()) v = static_cast<float>(erng.normal());
    const std::vector<float> t0(64, 0.0f), t1(64, 1.0f);
    Tensor a = flowmatch::interpolate(z, xd, t0), b = flowmatch::interpolate(z, xd, t1);
    const bool ends = std::equal(a.data().begin(), a.data().end(), z.data().begin()) &&
                      std::equal(b.data().begin(), b.data().end(), xd.data().begin());

    const auto t_start = clock_type::now();
    MlpField net({.data_dim = 2, .cond_dim = 1, .hidden = 128, .layers = 3, .time_dim = 16, .seed = 11});
    const std::size_t steps = 12000, batch = 256;
    const double lr = 2e-3;
    Adam opt(net.parameters(), {.lr = lr, .max_grad_norm = 10.0});
    Rng rng(77);
    for (std::size_t k = 0; k < steps; ++k) {
        opt.set_lr(lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(k) / steps))));
        Tensor x({batch, 2}), y({batch, 1});
        for (std::size_t i = 0; i < batch; ++i) {
            const double c = rng.uniform(-1.0, 1.0);
            const auto [m1, m2] = toy_modes(c);
            const auto &m = rng.uniform() < 0.5 ? m1 : m2;
            y[i] = static_cast<float>(c);
            x[2 * i] = static_cast<float>(m[0] + kToySigma * rng.normal());
            x[2 * i + 1] = static_cast<float>(m[1] + kToySigma * rng.normal());
        }
        flowmatch::cfm_loss(net, x, y, rng).backward();
        opt.step();
        if (seconds_since(t_start) > 300.0) break;
    }
    const double train_secs = seconds_since(t_start);

    const std::size_t n = 1000;
    Tensor y({n, 1});
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<float>(-1.0 + 2.0 * (static_cast<double>(i) + 0.5) / n);
    std::string detail;
    bool ok = ends && train_secs <= 300.0;
    for (OdeMode mode : {OdeMode::Fixed, OdeMode::Adaptive}) {
        FmSamplerConfig cfg;
        cfg.mode = mode;
        FmSamples s = flowmatch::sample(net, y, {n, 2}, 2024, cfg);
        std::size_t inside = 0, upper = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto [m1, m2] = toy_modes(y[i]);
            const double px = s.x[2 * i], py = s.x[2 * i + 1];
            const double d1 = std::hypot(px - m1[0], py - m1[1]), d2 = std::hypot(px - m2[0], py - m2[1]);
            inside += std::min(d1, d2) <= 3.0 * kToySigma;
            upper += d1 < d2;
        }
        const double frac = static_cast<double>(inside) / n;
        ok = ok && frac >= 0.95;
        detail += format("%s %.1f%% within 3 sigma (%.1f%% upper mode); ", to_string(mode).c_str(), 100.0 * frac,
                         100.0 * static_cast<double>(upper) / n);
    }
    return {ok, format("endpoints %s; ", ends ? "exact" : "NOT exact") + detail + format("trained %.0f s", train_secs)};
}

// 6, 7 ---------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    static CsvTable parse(const std::string &text) {
        CsvTable t;
        std::istringstream in(text);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (first) t.header = cells;
            else t.rows.push_back(cells);
            first = false;
        }
        return t;
    }
    std::optional<std::string> get(const std::string &model, const std::string &column, const std::string &key_col = "",
                                   const std::string &key = "") const {
        const auto col = std::find(header.begin(), header.end(), column) - header.begin();
        const auto kc = std::find(header.begin(), header.end(), key_col) - header.begin();
        for (const auto &r : rows) {
            if (r.at(0) != model) continue;
            if (!key_col.empty() && r.at(kc) != key) continue;
            return r.at(col);
        }
        return std::nullopt;
    }
};

struct DeskRun {
    bool ran = false;
    int exit_code = 0;
    double seconds = 0.0;
    std::string failed_step;
    CsvTable summary, uncertainty;
};

int cli(std::vector<std::string> args) { return cli::run(args); }

DeskRun &desk_run() {
    static DeskRun run;
    if (run.ran) return run;
    run.ran = true;
    const std::string config = (fs::path(CLAB_SOURCE_DIR) / "configs" / "desk.json").string();
    const std::string out = (g_workdir / "desk").string();
    fs::remove_all(out);
    const std::vector<std::string> common{"--config", config, "--out", out, "--quiet"};
    auto step = [&](std::vector<std::string> args) {
        if (run.exit_code != 0) return;
        args.insert(args.end(), common.begin(), common.end());
        run.exit_code = cli(args);
        if (run.exit_code != 0) {
            for (const auto &a : args) run.failed_step += a + " ";
        }
    };
    const auto t0 = clock_type::now();
    step({"gen"});
    for (const char *m : {"e2e", "dm", "fm"}) step({"train", "--model", m});
    for (const char *m : {"dm", "fm"}) step({"sample", "--model", m});
    step({"eval"});
    run.seconds = seconds_since(t0);
    if (run.exit_code == 0) {
        const RunConfig cfg = load_run_config(config);
        const fs::path reports = fs::path(out) / cfg.name / "reports";
        const std::string m = to_string(cfg.modality);
        run.summary = CsvTable::parse(io::read_text(reports / ("summary_" + m + ".csv")));
        run.uncertainty = CsvTable::parse(io::read_text(reports / ("uncertainty_" + m + ".csv")));
    }
    return run;
}

Outcome desk_ordering() {
    DeskRun &r = desk_run();
    if (r.exit_code != 0) return {false, format("pipeline step '%sfailed with exit code %d", r.failed_step.c_str(), r.exit_code)};
    const double pre = std::stod(r.summary.get("pre", "mae").value());
    bool ok = r.seconds <= 900.0;
    std::string detail = format("MAE pre %.3f", pre);
    for (const char *m : {"e2e", "dm", "fm"}) {
        auto v = r.summary.get(m, "mae");
        if (!v) return {false, std::string("no summary row for ") + m};
        const double mae = std::stod(*v);
        ok = ok && mae < pre;
        detail += format(", %s %.3f", m, mae);
    }
    return {ok, detail + format("; pipeline %.0f s (limit 900 s)", r.seconds)};
}

Outcome desk_uncertainty() {
    DeskRun &r = desk_run();
    if (r.exit_code != 0) return {false, "pipeline failed (see criterion 6)"};
    bool ok = true;
    std::string detail;
    for (const char *m : {"dm", "fm"}) {
        auto rv = r.uncertainty.get(m, "r", "error", "abs");
        auto pv = r.uncertainty.get(m, "p_value", "error", "abs");
        auto nv = r.uncertainty.get(m, "n", "error", "abs");
        if (!rv || !pv) return {false, std::string("no uncertainty row for ") + m};
        const double rr = std::stod(*rv), p = std::stod(*pv);
        ok = ok && rr > 0.0 && p < 0.01;
        detail += format("%s r = %.3f, p = %.2g (n = %s); ", m, rr, p, nv->c_str());
    }
    return {ok, detail + "stddev vs |error|, pooled voxels"};
}

// 8 ------------------------------------------------------------------------

Outcome modality_agreement() {
    std::vector<int> thresholds(30);
    std::iota(thresholds.begin(), thresholds.end(), 1);
    double worst = 1.0;
    std::size_t slices = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PhantomRecipe r;
        r.noise = 0.0;
        auto [t1, t1w] = phantom::paired_modalities(seed, r);
        std::vector<SlicePair> a, b;
        for (const auto &p : dataset::extract_pairs(t1, seed))
            if (p.has_roi()) a.push_back(p);
        for (const auto &p : dataset::extract_pairs(t1w, seed))
            if (p.has_roi()) b.push_back(p);
        slices += a.size();
        for (std::size_t i = 0; i < a.size(); ++i) {
            for (const auto &row : report::cross_modality({a[i]}, {b[i]}, thresholds)) worst = std::min(worst, row.dice);
        }
    }
    return {worst == 1.0 && slices > 0,
            format("min Dice %.6f over thresholds 1..30%% and %zu ROI slices of 5 noise-free phantoms", worst, slices)};
}

// 9 ------------------------------------------------------------------------

// Two-sided Student-t tail by the finite trigonometric series for integer
// degrees of freedom.
double t_two_sided(double t, std::size_t nu) {
    const double th = std::atan(std::abs(t) / std::sqrt(static_cast<double>(nu)));
    const double s = std::sin(th), c = std::cos(th);
    double a;
    if (nu % 2 == 1) {
        double term = c, sum = nu > 1 ? c : 0.0;
        for (std::size_t k = 3; k + 1 < nu; k += 2) {
            term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
            sum += term;
        }
        a = 2.0 / M_PI * (th + s * sum);
    } else {
        double term = 1.0, sum = 1.0;
        for (std::size_t k = 2; k + 1 < nu; k += 2) {
            term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
            sum += term;
        }
        a = s * sum;
    }
    return 1.0 - a;
}

std::vector<float> random_field(std::size_t n, Rng &rng) {
    std::vector<float> v(n);
    for (auto &x : v) x = static_cast<float>(rng.normal());
    return v;
}

std::vector<float> random_mask(std::size_t n, Rng &rng, double p) {
    std::vector<float> v(n);
    for (auto &x : v) x = rng.uniform() < p ? 1.0f : 0.0f;
    return v;
}

Outcome metric_oracles() {
    Rng rng(99);
    const int n = 100;
    double e_dice = 0.0, e_seg = 0.0, e_r = 0.0, e_p = 0.0, e_ssim = 0.0;
    for (int i = 0; i < n; ++i) {
        const std::size_t len = 20 + rng.below(200);
        auto a = random_mask(len, rng, rng.uniform()), b = random_mask(len, rng, rng.uniform());
        const auto o = metrics::dice_jaccard(a, b);
        const auto r = testing::oracle::dice_jaccard(a, b);
        e_dice = std::max({e_dice, std::abs(o.dice - r.dice), std::abs(o.jaccard - r.jaccard)});

        auto field = random_field(len, rng);
        // Coarse quantization creates ties, which both sides must break alike.
        if (i % 2 == 0)
            for (auto &f : field) f = std::round(f * 2.0f) / 2.0f;
        auto roi = random_mask(len, rng, 0.3 + 0.7 * rng.uniform());
        const double pct = 1.0 + 29.0 * rng.uniform();
        const auto seg = metrics::threshold_segment(field, roi, pct);
        const auto ref = testing::oracle::threshold_segment(field, roi, pct);
        for (std::size_t k = 0; k < len; ++k) e_seg = std::max(e_seg, static_cast<double>(std::abs(seg[k] - ref[k])));

        auto u = random_field(len, rng), v = random_field(len, rng);
        const double mix = rng.uniform(-1.0, 1.0);
        for (std::size_t k = 0; k < len; ++k) v[k] = static_cast<float>(mix * u[k] + (1.0 - std::abs(mix)) * v[k]);
        const auto c = metrics::pearson(u, v);
        const double rr = testing::oracle::pearson_r(u, v);
        const double tt = rr * std::sqrt((len - 2.0) / (1.0 - rr * rr));
        e_r = std::max(e_r, std::abs(c.r - rr));
        e_p = std::max(e_p, std::abs(c.p_value - t_two_sided(tt, len - 2)));

        const std::size_t h = 11 + rng.below(10), w = 11 + rng.below(10);
        auto ia = random_field(h * w, rng), ib = ia;
        for (auto &x : ib) x += static_cast<float>(0.3 * rng.normal());
        e_ssim = std::max(e_ssim, std::abs(metrics::ssim(ia, ib, h, w, {.data_range = 4.0}) -
                                           testing::oracle::ssim(ia, ib, h, w, 4.0)));
    }
    const bool ok = e_dice <= 1e-9 && e_seg == 0.0 && e_r <= 1e-9 && e_p <= 1e-9 && e_ssim <= 1e-6;
    return {ok, format("%d instances each; max |diff| dice/jaccard %.1e, segment %.0f, pearson r %.1e, p %.1e, ssim %.1e", n,
                       e_dice, e_seg, e_r, e_p, e_ssim)};
}

// 10 -----------------------------------------------------------------------

std::map<std::string, std::string> pipeline_reports(const fs::path &out) {
    const std::string config = (fs::path(CLAB_SOURCE_DIR) / "configs" / "tiny.json").string();
    fs::remove_all(out);
    const std::vector<std::string> common{"--config", config, "--out", out.string(), "--seed", "1234", "--quiet"};
    std::vector<std::vector<std::string>> steps{{"gen"}};
    for (const char *mod : {"T1", "T1w"}) {
        for (const char *m : {"e2e", "dm", "fm"}) steps.push_back({"train", "--model", m, "--modality", mod});
        for (const char *m : {"dm", "fm"}) steps.push_back({"sample", "--model", m, "--modality", mod});
        steps.push_back({"eval", "--modality", mod});
    }
    steps.push_back({"sweep"});
    for (auto args : steps) {
        args.insert(args.end(), common.begin(), common.end());
        if (cli(args) != 0) throw std::runtime_error("pipeline step " + args[0] + " failed");
    }
    std::map<std::string, std::string> files;
    for (const auto &e : fs::recursive_directory_iterator(out)) {
        if (e.path().extension() == ".csv") files[fs::relative(e.path(), out).string()] = io::read_text(e.path());
    }
    return files;
}

Outcome determinism() {
    const auto a = pipeline_reports(g_workdir / "det_a");
    const auto b = pipeline_reports(g_workdir / "det_b");
    std::size_t bytes = 0, same = 0;
    for (const auto &[name, text] : a) {
        bytes += text.size();
        auto it = b.find(name);
        same += it != b.end() && it->second == text;
    }
    return {a.size() == b.size() && same == a.size() && !a.empty(),
            format("%zu/%zu report CSVs byte-identical (%zu bytes)", same, a.size(), bytes)};
}

}  // namespace

int main(int argc, char **argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--workdir" && i + 1 < argc) g_workdir = argv[++i];
        else if (!a.empty() && std::all_of(a.begin(), a.end(), [](unsigned char c) { return std::isdigit(c); }))
            selected.push_back(std::stoi(a));
        else {
            std::fprintf(stderr, "usage: %s [--workdir DIR] [criterion ...]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"autodiff gradients match finite differences", autodiff},
        {"DOPRI-5 order and accuracy", dopri_order},
        {"diffusion sampler with analytic score", diffusion_oracle},
        {"noise schedule endpoints and increments", schedule},
        {"flow matching endpoints and two-mode toy", fm_toy},
        {"desk-scale MAE ordering vs pre-contrast", desk_ordering},
        {"ensemble stddev tracks absolute error", desk_uncertainty},
        {"paired-modality segmentation agreement", modality_agreement},
        {"metric oracles", metric_oracles},
        {"pipeline determinism", determinism},
    };
    fs::create_directories(g_workdir);
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) continue;
        const auto t0 = clock_type::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
