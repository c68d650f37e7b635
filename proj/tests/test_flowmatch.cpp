#include <doctest.h>

#include <cmath>

#include "clab/adam.hpp"
#include "clab/flowmatch.hpp"

using namespace clab;

namespace {

struct LambdaField : ConditionalField {
    std::function<Tensor(const Tensor &, const Tensor &, std::span<const float>)> fn;
    Tensor field(const Tensor &x, const Tensor &y, std::span<const float> t) const override { return fn(x, y, t); }
};

OdeProblem linear_problem(double lambda) {
    OdeProblem p;
    p.x0 = {1.0};
    p.rhs = [lambda](double, std::span<const double> x, std::span<double> dx) { dx[0] = lambda * x[0]; };
    return p;
}

}  // namespace

TEST_SUITE("flowmatch") {
    TEST_CASE("zero right-hand side keeps the state exactly") {
        OdeProblem p;
        p.x0 = {3.25, -1.5};
        p.rhs = [](double, std::span<const double>, std::span<double> dx) { std::fill(dx.begin(), dx.end(), 0.0); };
        auto r = dopri5(p);
        CHECK(r.x == p.x0);
        CHECK(r.t == 1.0);
        CHECK(r.accepted >= 1);
    }

    TEST_CASE("exponential growth reaches e") {
        auto r = dopri5(linear_problem(1.0));
        CHECK(std::abs(r.x[0] - std::exp(1.0)) / std::exp(1.0) <= 1e-6);
        for (double e : r.error_history) CHECK(std::isfinite(e));
        CHECK(r.rhs_evals > 0);
    }

    TEST_CASE("fast decay needs more steps and stays accurate") {
        auto slow = dopri5(linear_problem(1.0));
        auto fast = dopri5(linear_problem(-100.0));
        CHECK(fast.accepted > slow.accepted);
        CHECK(std::abs(fast.x[0] - std::exp(-100.0)) <= 1e-6);
    }

    TEST_CASE("accepted steps meet the tolerance") {
        auto r = dopri5(linear_problem(-100.0));
        std::size_t ok = 0;
        for (double e : r.error_history) ok += e <= 1.0;
        CHECK(ok == r.accepted);
        CHECK(r.error_history.size() == r.accepted + r.rejected);
    }

    TEST_CASE("harmonic oscillator against the analytic solution") {
        OdeProblem p;
        p.x0 = {1.0, 0.0};
        p.t1 = 2.0;
        p.atol = 1e-9;
        p.rtol = 1e-9;
        p.rhs = [](double, std::span<const double> x, std::span<double> dx) {
            dx[0] = x[1];
            dx[1] = -x[0];
        };
        auto r = dopri5(p);
        CHECK(r.x[0] == doctest::Approx(std::cos(2.0)).epsilon(1e-7));
        CHECK(r.x[1] == doctest::Approx(-std::sin(2.0)).epsilon(1e-7));
    }

    TEST_CASE("fixed-step convergence order is five") {
        auto p = linear_problem(1.0);
        std::vector<double> logh, loge;
        for (std::size_t n : {10, 20, 40, 80}) {
            auto r = dopri5_fixed(p, n);
            logh.push_back(std::log(1.0 / n));
            loge.push_back(std::log(std::abs(r.x[0] - std::exp(1.0))));
        }
        // Least-squares slope.
        const double mh = std::accumulate(logh.begin(), logh.end(), 0.0) / 4;
        const double me = std::accumulate(loge.begin(), loge.end(), 0.0) / 4;
        double sxy = 0, sxx = 0;
        for (int i = 0; i < 4; ++i) {
            sxy += (logh[i] - mh) * (loge[i] - me);
            sxx += (logh[i] - mh) * (logh[i] - mh);
        }
        const double slope = sxy / sxx;
        CHECK(slope >= 4.5);
        CHECK(slope <= 5.5);
    }

    TEST_CASE("step limit carries the partial trajectory") {
        auto p = linear_problem(-100.0);
        p.max_steps = 5;
        try {
            dopri5(p);
            FAIL("expected StepLimitError");
        } catch (const StepLimitError &e) {
            CHECK(e.partial().accepted + e.partial().rejected == 5);
            CHECK(e.partial().t > 0.0);
            CHECK(e.partial().t < 1.0);
            CHECK(e.partial().x.size() == 1);
        }
    }

    TEST_CASE("non-finite right-hand side and invalid problems") {
        OdeProblem p;
        p.x0 = {1.0};
        p.rhs = [](double t, std::span<const double>, std::span<double> dx) { dx[0] = t > 0.3 ? NAN : 1.0; };
        CHECK_THROWS_AS(dopri5(p), NumericError);
        auto q = linear_problem(1.0);
        q.atol = 0.0;
        CHECK_THROWS_AS(dopri5(q), std::invalid_argument);
        q = linear_problem(1.0);
        q.t1 = q.t0;
        CHECK_THROWS_AS(dopri5(q), std::invalid_argument);
        CHECK_THROWS_AS(dopri5_fixed(linear_problem(1.0), 0), std::invalid_argument);
    }

    TEST_CASE("integration is reproducible") {
        auto a = dopri5(linear_problem(-3.0)), b = dopri5(linear_problem(-3.0));
        CHECK(a.x == b.x);
        CHECK(a.error_history == b.error_history);
    }

    TEST_CASE("interpolation endpoints are exact") {
        Rng rng(1);
        Tensor z({3, 5}), x({3, 5});
        for (auto &v : z.data()) v = static_cast<float>(rng.normal());
        for (auto &v : x.data()) v = static_cast<float>(rng.normal());
        std::vector<float> t{0.0f, 1.0f, 0.5f};
        Tensor xt = flowmatch::interpolate(z, x, t);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(xt[i] == z[i]);
            CHECK(xt[5 + i] == x[5 + i]);
            CHECK(xt[10 + i] == doctest::Approx(0.5 * (z[10 + i] + x[10 + i])));
        }
    }

    TEST_CASE("cfm loss with an oracle and a zero field") {
        Rng data(2);
        const std::size_t n = 4000, d = 2;
        Tensor x({n, d}), y({n, 1}, 0.0f);
        for (auto &v : x.data()) v = static_cast<float>(data.uniform(-1, 1));
        LambdaField oracle;
        oracle.fn = [&](const Tensor &xt, const Tensor &, std::span<const float> t) {
            Tensor out(xt.shape());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    out[i * d + j] = (x[i * d + j] - xt[i * d + j]) / (1.0f - t[i]);
            return out;
        };
        Rng rng(3);
        CHECK(flowmatch::cfm_loss(oracle, x, y, rng).item() < 1e-3);
        // E|x - z|^2 = E|x|^2 + d with E x_j^2 = 1/3.
        MlpField zero({.data_dim = d, .cond_dim = 1});
        CHECK(flowmatch::cfm_loss(zero, x, y, rng).item() == doctest::Approx(d + d / 3.0).epsilon(0.05));
    }

    TEST_CASE("cfm training reduces the loss on a two-pixel toy") {
        MlpField net({.data_dim = 2, .cond_dim = 1, .hidden = 32, .layers = 2, .seed = 4});
        Adam opt(net.parameters(), {.lr = 3e-3});
        Rng rng(5);
        double first = 0.0, last = 0.0;
        for (int step = 0; step < 200; ++step) {
            Tensor x({32, 2}), y({32, 1});
            for (std::size_t i = 0; i < 32; ++i) {
                const float c = rng.uniform() < 0.5 ? -1.0f : 1.0f;
                y[i] = c;
                x[2 * i] = c;
                x[2 * i + 1] = -0.5f * c;
            }
            Tensor loss = flowmatch::cfm_loss(net, x, y, rng);
            if (step < 20) first += loss.item();
            if (step >= 180) last += loss.item();
            loss.backward();
            opt.step();
        }
        CHECK(last < 0.8 * first);
    }

    TEST_CASE("constant field moves every sample by the constant") {
        MlpField f({.data_dim = 2, .cond_dim = 1, .hidden = 4, .layers = 1, .time_dim = 4});
        Tensor bias = f.named_parameters().back().second;
        bias[0] = 0.75f;
        bias[1] = -2.0f;
        Tensor y({4, 1}, 0.0f);
        for (OdeMode mode : {OdeMode::Fixed, OdeMode::Adaptive}) {
            auto out = flowmatch::sample(f, y, {4, 2}, 17, {.mode = mode});
            for (std::size_t b = 0; b < 4; ++b) {
                Rng rng(split_seed(17, b));
                const double z0 = rng.normal(), z1 = rng.normal();
                CHECK(out.x[2 * b] == doctest::Approx(z0 + 0.75).epsilon(1e-6));
                CHECK(out.x[2 * b + 1] == doctest::Approx(z1 - 2.0).epsilon(1e-6));
            }
            CHECK(out.stats.size() == 4);
            if (mode == OdeMode::Fixed) CHECK(out.stats[0].accepted == 10);
        }
    }

    TEST_CASE("fixed and adaptive modes agree on a smooth field") {
        MlpField f({.data_dim = 3, .cond_dim = 1, .hidden = 16, .layers = 2, .time_dim = 4, .seed = 9});
        Rng rng(10);
        for (auto [name, t] : f.named_parameters())
            if (name == "fc2.weight")
                for (auto &v : t.data()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
        Tensor y({8, 1});
        for (auto &v : y.data()) v = static_cast<float>(rng.normal());
        auto fixed = flowmatch::sample(f, y, {8, 3}, 3, {.mode = OdeMode::Fixed});
        auto adaptive = flowmatch::sample(f, y, {8, 3}, 3, {.mode = OdeMode::Adaptive});
        double se = 0.0;
        for (std::size_t i = 0; i < fixed.x.size(); ++i) se += std::pow(fixed.x[i] - adaptive.x[i], 2);
        CHECK(std::sqrt(se / fixed.x.size()) < 1e-2);
        const std::string csv = flowmatch::stats_csv(adaptive.stats);
        CHECK(csv.rfind("sample,accepted,rejected,rhs_evals\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    }

    TEST_CASE("deterministic conditional target is learned") {
        // X | Y = y is the point mass at y.
        MlpField net({.data_dim = 1, .cond_dim = 1, .hidden = 64, .layers = 2, .seed = 11});
        Adam opt(net.parameters(), {.lr = 2e-3});
        Rng rng(12);
        for (int step = 0; step < 6000; ++step) {
            if (step == 4000) opt.set_lr(5e-4);
            Tensor x({64, 1}), y({64, 1});
            for (std::size_t i = 0; i < 64; ++i) x[i] = y[i] = static_cast<float>(rng.uniform(-1, 1));
            Tensor loss = flowmatch::cfm_loss(net, x, y, rng);
            loss.backward();
            opt.step();
        }
        Tensor y({20, 1});
        for (std::size_t i = 0; i < 20; ++i) y[i] = -0.9f + 0.09f * static_cast<float>(i);
        auto out = flowmatch::sample(net, y, {20, 1}, 13, {.mode = OdeMode::Adaptive});
        double worst = 0.0;
        for (std::size_t i = 0; i < 20; ++i) worst = std::max(worst, double(std::abs(out.x[i] - y[i])));
        MESSAGE("worst deviation " << worst);
        CHECK(worst < 0.05);
    }

    TEST_CASE("mode names") {
        CHECK(ode_mode_from_string("fixed") == OdeMode::Fixed);
        CHECK(ode_mode_from_string(to_string(OdeMode::Adaptive)) == OdeMode::Adaptive);
        CHECK_THROWS_AS(ode_mode_from_string("rk4"), std::invalid_argument);
    }
}
