#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "clab/cli.hpp"
#include "clab/diffusion.hpp"
#include "clab/errors.hpp"
#include "clab/flowmatch.hpp"
#include "clab/metrics.hpp"
#include "clab/posterior.hpp"
#include "clab/report.hpp"

namespace py = pybind11;
using namespace clab;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray &a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor &t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::span<const float> view(const FloatArray &a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

void same_size(const FloatArray &a, const FloatArray &b, const char *what) {
    if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": arrays differ in size");
}

PhantomRecipe recipe_from(const py::dict &d) {
    const std::string text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
    return nlohmann::json::parse(text).get<PhantomRecipe>();
}

py::dict volume_dict(const PhantomVolume &v) {
    py::dict d;
    d["pre"] = to_array(v.pre);
    d["post"] = to_array(v.post);
    d["roi"] = to_array(v.roi);
    d["modality"] = to_string(v.modality);
    d["gain"] = v.gain;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "contrastlab core: phantoms, metrics, samplers and the run CLI";
    m.attr("__version__") = CLAB_VERSION;

    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<StepLimitError>(m, "StepLimitError", PyExc_RuntimeError);

    m.def(
        "phantom",
        [](py::dict recipe, const std::string &modality, std::uint64_t seed) {
            PhantomRecipe r = recipe_from(recipe);
            r.modality = modality_from_string(modality);
            r.seed = seed;
            return volume_dict(phantom::generate(r));
        },
        py::arg("recipe") = py::dict(), py::arg("modality") = "T1", py::arg("seed") = 0,
        "Phantom volume as a dict of [D,H,W] arrays (pre, post, roi) plus modality and gain.");

    m.def(
        "paired_phantoms",
        [](std::uint64_t seed, py::dict recipe) {
            auto [t1, t1w] = phantom::paired_modalities(seed, recipe_from(recipe));
            return py::make_tuple(volume_dict(t1), volume_dict(t1w));
        },
        py::arg("seed"), py::arg("recipe") = py::dict());

    m.def(
        "cross_modality_dice",
        [](std::uint64_t seed, py::dict recipe, std::vector<int> thresholds) {
            auto [t1, t1w] = phantom::paired_modalities(seed, recipe_from(recipe));
            std::vector<SlicePair> a, b;
            for (const auto &p : dataset::extract_pairs(t1, 0))
                if (p.has_roi()) a.push_back(p);
            for (const auto &p : dataset::extract_pairs(t1w, 0))
                if (p.has_roi()) b.push_back(p);
            std::vector<double> dice;
            for (const auto &row : report::cross_modality(a, b, thresholds)) dice.push_back(row.dice);
            return dice;
        },
        py::arg("seed"), py::arg("recipe") = py::dict(), py::arg("thresholds"),
        "Mean ground-truth Dice between the T1 and T1w segmentations of one phantom, per threshold.");

    m.def(
        "mae",
        [](FloatArray pred, FloatArray target, std::optional<FloatArray> mask) {
            same_size(pred, target, "mae");
            if (mask) {
                same_size(pred, *mask, "mae");
                return metrics::mae(view(pred), view(target), view(*mask));
            }
            return metrics::mae(view(pred), view(target));
        },
        py::arg("pred"), py::arg("target"), py::arg("mask") = py::none());

    m.def(
        "ssim",
        [](FloatArray a, FloatArray b, double data_range) {
            if (a.ndim() != 2) throw std::invalid_argument("ssim: expects 2D images");
            same_size(a, b, "ssim");
            return metrics::ssim(view(a), view(b), a.shape(0), a.shape(1), {.data_range = data_range});
        },
        py::arg("a"), py::arg("b"), py::arg("data_range") = 1.0);

    m.def(
        "pearson",
        [](FloatArray u, FloatArray v) {
            same_size(u, v, "pearson");
            auto c = metrics::pearson(view(u), view(v));
            return py::make_tuple(c.r, c.p_value);
        },
        py::arg("u"), py::arg("v"), "Pearson r and two-sided p-value.");

    m.def(
        "relative_error",
        [](FloatArray mean, FloatArray post, FloatArray pre) {
            same_size(mean, post, "relative_error");
            same_size(mean, pre, "relative_error");
            auto r = metrics::relative_error(view(mean), view(post), view(pre));
            return py::make_tuple(r.value, r.skip);
        },
        py::arg("mean"), py::arg("post"), py::arg("pre"));

    m.def(
        "threshold_segment",
        [](FloatArray field, FloatArray roi, double percent) {
            same_size(field, roi, "threshold_segment");
            auto s = metrics::threshold_segment(view(field), view(roi), percent);
            FloatArray out(std::vector<py::ssize_t>(field.shape(), field.shape() + field.ndim()));
            std::copy(s.begin(), s.end(), out.mutable_data());
            return out;
        },
        py::arg("field"), py::arg("roi"), py::arg("percent"));

    m.def(
        "dice_jaccard",
        [](FloatArray a, FloatArray b) {
            same_size(a, b, "dice_jaccard");
            auto o = metrics::dice_jaccard(view(a), view(b));
            return py::make_tuple(o.dice, o.jaccard);
        },
        py::arg("pred"), py::arg("truth"));

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def(py::init<std::size_t, double, double>(), py::arg("steps") = 2000, py::arg("alpha_first") = 1e-3,
             py::arg("alpha_last") = 5e-2)
        .def_property_readonly("steps", &NoiseSchedule::steps)
        .def("alpha", &NoiseSchedule::alpha, py::arg("t"))
        .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
        .def("alphas", [](const NoiseSchedule &s) { return s.alphas(); })
        .def("sampling_grid", &NoiseSchedule::sampling_grid, py::arg("n"));

    m.def(
        "gaussian_reverse_sample",
        [](double mu, double sigma, std::size_t n, std::uint64_t seed, std::optional<std::size_t> steps) {
            NoiseSchedule s;
            Tensor x = diffusion::reverse_sample_score(s, diffusion::gaussian_score(s, mu, sigma), {n}, seed,
                                                       steps.value_or(s.steps()));
            return to_array(x);
        },
        py::arg("mu"), py::arg("sigma"), py::arg("n"), py::arg("seed") = 0, py::arg("steps") = py::none(),
        "Reverse-SDE draws with the analytic score of N(mu, sigma^2).");

    m.def(
        "dopri5",
        [](std::function<std::vector<double>(double, std::vector<double>)> rhs, std::vector<double> x0, double t0,
           double t1, double atol, double rtol, std::size_t max_steps) {
            OdeProblem p;
            p.rhs = [&](double t, std::span<const double> x, std::span<double> dx) {
                auto r = rhs(t, std::vector<double>(x.begin(), x.end()));
                if (r.size() != dx.size()) throw std::invalid_argument("dopri5: rhs returned the wrong length");
                std::copy(r.begin(), r.end(), dx.begin());
            };
            p.x0 = std::move(x0);
            p.t0 = t0;
            p.t1 = t1;
            p.atol = atol;
            p.rtol = rtol;
            p.max_steps = max_steps;
            auto res = dopri5(p);
            py::dict d;
            d["x"] = res.x;
            d["accepted"] = res.accepted;
            d["rejected"] = res.rejected;
            d["rhs_evals"] = res.rhs_evals;
            return d;
        },
        py::arg("rhs"), py::arg("x0"), py::arg("t0") = 0.0, py::arg("t1") = 1.0, py::arg("atol") = 1e-5,
        py::arg("rtol") = 1e-4, py::arg("max_steps") = 10000);

    m.def(
        "aggregate",
        [](FloatArray samples) {
            auto e = posterior::aggregate(to_tensor(samples));
            return py::make_tuple(to_array(e.mean), to_array(e.stddev));
        },
        py::arg("samples"), "Voxelwise mean and population stddev over the first axis.");

    m.def(
        "cli", [](std::vector<std::string> args) { return cli::run(args); }, py::arg("args"),
        "Runs the clab command line (without the program name) and returns its exit code.");
}
