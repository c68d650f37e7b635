#include "clab/flowmatch.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clab {

namespace {

// Dormand-Prince coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - bhat, where bhat is the embedded fourth-order solution
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;

struct Stepper {
    const OdeProblem &p;
    std::size_t n;
    std::vector<double> k1, k2, k3, k4, k5, k6, k7, tmp, xnew;
    std::size_t evals = 0;

    explicit Stepper(const OdeProblem &problem)
        : p(problem), n(problem.x0.size()), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), xnew(n) {}

    void eval(double t, const std::vector<double> &x, std::vector<double> &k) {
        p.rhs(t, x, k);
        ++evals;
        for (double v : k) {
            if (!std::isfinite(v)) throw NumericError("ode: non-finite right-hand side at t = " + std::to_string(t));
        }
    }

    // Takes one step of size h from (t, x) with k1 = f(t, x) already set.
    // Leaves the fifth-order result in xnew and f(t + h, xnew) in k7.
    void step(double t, const std::vector<double> &x, double h) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * a21 * k1[i];
        eval(t + c2 * h, tmp, k2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * (a31 * k1[i] + a32 * k2[i]);
        eval(t + c3 * h, tmp, k3);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        eval(t + c4 * h, tmp, k4);
        for (std::size_t i = 0; i < n; ++i)
            tmp[i] = x[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        eval(t + c5 * h, tmp, k5);
        for (std::size_t i = 0; i < n; ++i)
            tmp[i] = x[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        eval(t + h, tmp, k6);
        for (std::size_t i = 0; i < n; ++i)
            xnew[i] = x[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        eval(t + h, xnew, k7);
    }

    double error_norm(const std::vector<double> &x, double h) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double err = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
            const double sc = p.atol + p.rtol * std::max(std::abs(x[i]), std::abs(xnew[i]));
            acc += (err / sc) * (err / sc);
        }
        return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
    }
};

double rms_scaled(const std::vector<double> &v, const std::vector<double> &x, const OdeProblem &p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double sc = p.atol + p.rtol * std::abs(x[i]);
        acc += (v[i] / sc) * (v[i] / sc);
    }
    return v.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
}

// Starting step from the local behaviour of the solution.
double initial_step(Stepper &s, const std::vector<double> &x, double span) {
    const OdeProblem &p = s.p;
    const double d0 = rms_scaled(x, x, p);
    const double d1 = rms_scaled(s.k1, x, p);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    std::vector<double> x1(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x1[i] = x[i] + h0 * s.k1[i];
    s.eval(p.t0 + h0, x1, s.k2);
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = s.k2[i] - s.k1[i];
    const double d2 = rms_scaled(diff, x, p) / h0;
    const double m = std::max(d1, d2);
    const double h1 = m <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / m, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
}

}  // namespace

void OdeProblem::validate() const {
    if (!rhs) throw std::invalid_argument("ode: missing right-hand side");
    if (!(t1 > t0)) throw std::invalid_argument("ode: empty time span");
    if (!(atol > 0.0) || !(rtol > 0.0)) throw std::invalid_argument("ode: tolerances must be positive");
    if (max_steps == 0) throw std::invalid_argument("ode: max_steps must be positive");
}

Dopri5Result dopri5(const OdeProblem &p) {
    p.validate();
    constexpr double safety = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
    constexpr double expo = 0.2 - 0.75 * beta;

    Stepper s(p);
    Dopri5Result r;
    r.x = p.x0;
    r.t = p.t0;
    const double span = p.t1 - p.t0;
    s.eval(r.t, r.x, s.k1);
    double h = p.initial_step > 0.0 ? std::min(p.initial_step, span) : initial_step(s, r.x, span);
    double err_old = 1e-4;
    bool last_rejected = false;

    while (r.t < p.t1) {
        if (r.accepted + r.rejected >= p.max_steps) {
            r.rhs_evals = s.evals;
            throw StepLimitError("ode: step limit " + std::to_string(p.max_steps) + " reached at t = " +
                                     std::to_string(r.t),
                                 std::move(r));
        }
        // Land exactly on t1 instead of leaving a sliver.
        if (r.t + 1.01 * h >= p.t1) h = p.t1 - r.t;
        s.step(r.t, r.x, h);
        const double err = s.error_norm(r.x, h);
        r.error_history.push_back(err);
        const double fac11 = std::pow(std::max(err, 1e-300), expo);
        if (err <= 1.0) {
            const double fac = std::clamp(fac11 / std::pow(err_old, beta) / safety, 1.0 / fac_max, 1.0 / fac_min);
            const bool at_end = r.t + h >= p.t1;
            r.t = at_end ? p.t1 : r.t + h;
            r.x.swap(s.xnew);
            s.k1.swap(s.k7);
            ++r.accepted;
            err_old = std::max(err, 1e-4);
            double h_new = h / fac;
            if (last_rejected) h_new = std::min(h_new, h);
            last_rejected = false;
            h = h_new;
        } else {
            ++r.rejected;
            last_rejected = true;
            h /= std::min(1.0 / fac_min, fac11 / safety);
        }
    }
    r.rhs_evals = s.evals;
    return r;
}

Dopri5Result dopri5_fixed(const OdeProblem &p, std::size_t n) {
    p.validate();
    if (n == 0) throw std::invalid_argument("ode: fixed step count must be positive");
    Stepper s(p);
    Dopri5Result r;
    r.x = p.x0;
    r.t = p.t0;
    const double h = (p.t1 - p.t0) / static_cast<double>(n);
    s.eval(r.t, r.x, s.k1);
    for (std::size_t k = 0; k < n; ++k) {
        s.step(r.t, r.x, h);
        r.x.swap(s.xnew);
        s.k1.swap(s.k7);
        r.t = k + 1 == n ? p.t1 : p.t0 + h * static_cast<double>(k + 1);
        ++r.accepted;
    }
    r.rhs_evals = s.evals;
    return r;
}

std::string to_string(OdeMode m) { return m == OdeMode::Fixed ? "fixed" : "adaptive"; }

OdeMode ode_mode_from_string(const std::string &s) {
    if (s == "fixed") return OdeMode::Fixed;
    if (s == "adaptive") return OdeMode::Adaptive;
    throw std::invalid_argument("unknown ODE mode '" + s + "' (expected fixed or adaptive)");
}

namespace flowmatch {

Tensor interpolate(const Tensor &z, const Tensor &x, std::span<const float> t) {
    if (z.shape() != x.shape()) throw ShapeError("interpolate: z " + shape_str(z.shape()) + " vs x " + shape_str(x.shape()));
    if (x.rank() < 1 || t.size() != x.dim(0)) throw ShapeError("interpolate: need one time per sample");
    const std::size_t inner = x.size() / x.dim(0);
    std::vector<float> wt(x.size()), wz(x.size());
    for (std::size_t n = 0; n < t.size(); ++n) {
        std::fill_n(wt.begin() + n * inner, inner, t[n]);
        std::fill_n(wz.begin() + n * inner, inner, 1.0f - t[n]);
    }
    return ops::add(ops::mul(z, Tensor(x.shape(), std::move(wz))), ops::mul(x, Tensor(x.shape(), std::move(wt))));
}

Tensor cfm_loss(const ConditionalField &net, const Tensor &x, const Tensor &y, Rng &rng) {
    const std::size_t batch = x.dim(0);
    std::vector<float> t(batch);
    for (auto &v : t) v = static_cast<float>(rng.uniform());
    Tensor z(x.shape());
    for (auto &v : z.data()) v = static_cast<float>(rng.normal());
    Tensor xd = x.detach();
    Tensor xt = interpolate(z, xd, t);
    Tensor r = ops::sub(net.field(xt, y, t), ops::sub(xd, z));
    return ops::scale(ops::sum(ops::mul(r, r)), 1.0f / static_cast<float>(batch));
}

namespace {

Tensor slice_batch(const Tensor &t, std::size_t b) {
    Shape s = t.shape();
    const std::size_t inner = t.size() / s[0];
    s[0] = 1;
    return Tensor(s, std::vector<float>(t.data().begin() + b * inner, t.data().begin() + (b + 1) * inner));
}

}  // namespace

FmSamples sample(const ConditionalField &net, const Tensor &y, const Shape &sample_shape, std::uint64_t seed,
                 const FmSamplerConfig &config) {
    NoGradGuard ng;
    if (sample_shape.empty() || y.rank() < 1 || sample_shape[0] != y.dim(0)) {
        throw ShapeError("fm sample: batch of " + shape_str(sample_shape) + " does not match conditioning " +
                         shape_str(y.shape()));
    }
    const std::size_t batch = sample_shape[0], inner = numel(sample_shape) / batch;
    FmSamples out{Tensor(sample_shape), std::vector<StepStats>(batch)};

    std::vector<double> z(numel(sample_shape));
    for (std::size_t b = 0; b < batch; ++b) {
        Rng rng(split_seed(seed, b));
        for (std::size_t i = 0; i < inner; ++i) z[b * inner + i] = rng.normal();
    }

    auto finish = [&](std::size_t first, std::size_t count, const Dopri5Result &r) {
        for (std::size_t i = 0; i < count * inner; ++i) out.x[first * inner + i] = static_cast<float>(r.x[i]);
        for (std::size_t b = first; b < first + count; ++b) {
            out.stats[b] = StepStats{r.accepted, r.rejected, r.rhs_evals};
        }
    };

    auto make_problem = [&](const Tensor &cond, std::size_t first, std::size_t count) {
        OdeProblem p;
        Shape s = sample_shape;
        s[0] = count;
        p.x0.assign(z.begin() + first * inner, z.begin() + (first + count) * inner);
        p.atol = config.atol;
        p.rtol = config.rtol;
        p.max_steps = config.max_steps;
        p.rhs = [&net, cond, s, count](double t, std::span<const double> x, std::span<double> dx) {
            Tensor xt(s);
            for (std::size_t i = 0; i < x.size(); ++i) xt[i] = static_cast<float>(x[i]);
            std::vector<float> tv(count, static_cast<float>(std::clamp(t, 0.0, 1.0)));
            Tensor v = net.field(xt, cond, tv);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = v[i];
        };
        return p;
    };

    if (config.mode == OdeMode::Fixed) {
        // No error control, so the batch can share one integration.
        finish(0, batch, dopri5_fixed(make_problem(y, 0, batch), config.steps));
    } else {
        for (std::size_t b = 0; b < batch; ++b) finish(b, 1, dopri5(make_problem(slice_batch(y, b), b, 1)));
    }
    return out;
}

std::string stats_csv(const std::vector<StepStats> &stats) {
    std::ostringstream os;
    os << "sample,accepted,rejected,rhs_evals\n";
    for (std::size_t i = 0; i < stats.size(); ++i) {
        os << i << ',' << stats[i].accepted << ',' << stats[i].rejected << ',' << stats[i].rhs_evals << '\n';
    }
    return os.str();
}

}  // namespace flowmatch

}  // namespace clab
