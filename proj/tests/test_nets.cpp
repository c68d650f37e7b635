#include <doctest.h>

#include <filesystem>

#include "clab/adam.hpp"
#include "clab/nets.hpp"
#include "clab/rng.hpp"

using namespace clab;

namespace {

Tensor random_input(Shape shape, Rng &rng) {
    Tensor t(std::move(shape));
    for (auto &v : t.data()) v = static_cast<float>(rng.normal());
    return t;
}

// Gives the zero-initialized head some weight so outputs are informative.
void randomize_head(const NamedParams &params, Rng &rng) {
    for (auto [name, t] : params) {
        if (name.rfind("head.", 0) == 0)
            for (auto &v : t.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
}

std::filesystem::path temp_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("clab_nets_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("nets") {
    TEST_CASE("time embedding at zero is sine 0 and cosine 1") {
        std::vector<float> t{0.0f, 0.5f};
        Tensor e = time_embedding(t, 8);
        CHECK(e.shape() == Shape{2, 8});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(e[i] == 0.0f);
            CHECK(e[4 + i] == 1.0f);
        }
        CHECK(e[8] != 0.0f);
    }

    TEST_CASE("fresh U-Net predicts a zero difference") {
        UNetLite net({.levels = 2, .base_channels = 4});
        Rng rng(1);
        Tensor out = net.forward_e2e(random_input({2, 7, 8, 8}, rng));
        CHECK(out.shape() == Shape{2, 1, 8, 8});
        for (float v : out.data()) CHECK(v == 0.0f);
    }

    TEST_CASE("shape and range errors") {
        UNetLite e2e({.levels = 2, .base_channels = 4});
        UNetLite gen({.levels = 2, .base_channels = 4, .time_conditioned = true, .time_dim = 8});
        Rng rng(2);
        CHECK_THROWS_AS(e2e.forward_e2e(random_input({1, 6, 8, 8}, rng)), ShapeError);
        CHECK_THROWS_AS(e2e.forward_e2e(random_input({1, 7, 6, 8}, rng)), ShapeError);
        std::vector<float> t{0.5f};
        Tensor x = random_input({1, 1, 8, 8}, rng), y = random_input({1, 7, 8, 8}, rng);
        CHECK_NOTHROW(gen.forward_conditional(x, y, t));
        std::vector<float> bad{1.5f};
        CHECK_THROWS_AS(gen.forward_conditional(x, y, bad), std::out_of_range);
        std::vector<float> two{0.1f, 0.2f};
        CHECK_THROWS_AS(gen.forward_conditional(x, y, two), ShapeError);
        CHECK_THROWS_AS(gen.forward_conditional(random_input({1, 2, 8, 8}, rng), y, t), ShapeError);
        CHECK_THROWS_AS(gen.forward_e2e(y), std::logic_error);
        CHECK_THROWS_AS(e2e.forward_conditional(x, y, t), std::logic_error);
    }

    TEST_CASE("same seed builds identical networks") {
        UNetLite a({.levels = 2, .base_channels = 4, .time_conditioned = true, .time_dim = 8, .seed = 9});
        UNetLite b({.levels = 2, .base_channels = 4, .time_conditioned = true, .time_dim = 8, .seed = 9});
        auto pa = a.named_parameters(), pb = b.named_parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].first == pb[i].first);
            CHECK(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
        }
        CHECK(a.parameter_count() > 0);
    }

    TEST_CASE("samples in a batch are processed independently") {
        UNetLite net({.levels = 2, .base_channels = 4, .time_conditioned = true, .time_dim = 8, .seed = 3});
        Rng rng(4);
        randomize_head(net.named_parameters(), rng);
        Tensor x = random_input({3, 1, 8, 8}, rng), y = random_input({3, 7, 8, 8}, rng);
        std::vector<float> t{0.1f, 0.6f, 0.9f};
        Tensor full = net.forward_conditional(x, y, t);
        const std::size_t px = 64, py = 7 * 64;
        // Reverse the batch and compare sample by sample.
        Tensor xr({3, 1, 8, 8}), yr({3, 7, 8, 8});
        std::vector<float> tr{t[2], t[1], t[0]};
        for (std::size_t n = 0; n < 3; ++n) {
            std::copy_n(x.data().begin() + (2 - n) * px, px, xr.data().begin() + n * px);
            std::copy_n(y.data().begin() + (2 - n) * py, py, yr.data().begin() + n * py);
        }
        Tensor rev = net.forward_conditional(xr, yr, tr);
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t i = 0; i < px; ++i) CHECK(rev[n * px + i] == full[(2 - n) * px + i]);
        // Time actually matters.
        std::vector<float> t2{0.2f, 0.6f, 0.9f};
        Tensor moved = net.forward_conditional(x, y, t2);
        bool differs = false;
        for (std::size_t i = 0; i < px; ++i) differs |= moved[i] != full[i];
        CHECK(differs);
    }

    TEST_CASE("a few Adam steps reduce the loss on a fixed batch") {
        UNetLite net({.levels = 2, .base_channels = 4, .seed = 5});
        Rng rng(6);
        Tensor y = random_input({2, 7, 8, 8}, rng);
        Tensor target({2, 1, 8, 8});
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 64; ++i) target[n * 64 + i] = 0.5f * y[n * 7 * 64 + 3 * 64 + i];
        Adam opt(net.parameters(), {.lr = 1e-2});
        auto loss_fn = [&] { return ops::mean(ops::abs(net.forward_e2e(y) - target)); };
        const float first = loss_fn().item();
        for (int step = 0; step < 30; ++step) {
            Tensor loss = loss_fn();
            loss.backward();
            opt.step();
        }
        NoGradGuard ng;
        CHECK(loss_fn().item() < 0.5f * first);
    }

    TEST_CASE("checkpoint round trip reproduces outputs bit-exactly") {
        auto dir = temp_dir("ckpt");
        UNetConfig cfg{.levels = 2, .base_channels = 4, .time_conditioned = true, .time_dim = 8, .seed = 7};
        UNetLite a(cfg);
        Rng rng(8);
        randomize_head(a.named_parameters(), rng);
        nlohmann::json meta{{"role", "fm"}, {"epoch", 12}, {"net", cfg}};
        save_checkpoint(dir / "fm", a.named_parameters(), meta);

        UNetConfig cfg_b = read_checkpoint_meta(dir / "fm").at("net").get<UNetConfig>();
        cfg_b.seed = 99;  // weights come from the file
        UNetLite b(cfg_b);
        nlohmann::json back = load_checkpoint(dir / "fm", b.named_parameters());
        CHECK(back.at("epoch") == 12);
        CHECK(back.at("role") == "fm");

        Tensor x = random_input({1, 1, 8, 8}, rng), y = random_input({1, 7, 8, 8}, rng);
        std::vector<float> t{0.3f};
        Tensor oa = a.forward_conditional(x, y, t), ob = b.forward_conditional(x, y, t);
        CHECK(std::equal(oa.data().begin(), oa.data().end(), ob.data().begin()));

        UNetLite wrong({.levels = 2, .base_channels = 8, .time_conditioned = true, .time_dim = 8});
        CHECK_THROWS_AS(load_checkpoint(dir / "fm", wrong.named_parameters()), std::runtime_error);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("net config json rejects unknown keys") {
        nlohmann::json j{{"levels", 2}, {"depth", 4}};
        CHECK_THROWS_AS(j.get<UNetConfig>(), std::invalid_argument);
    }

    TEST_CASE("MLP field shapes and constant output") {
        MlpField f({.data_dim = 2, .cond_dim = 1, .hidden = 8, .layers = 2, .time_dim = 4});
        auto params = f.named_parameters();
        // Last bias set to a constant: fresh last weight is zero, so v == c.
        Tensor bias = params.back().second;
        bias[0] = 0.25f;
        bias[1] = -1.0f;
        Rng rng(10);
        Tensor x = random_input({5, 2}, rng), y = random_input({5, 1}, rng);
        std::vector<float> t(5, 0.4f);
        Tensor v = f.field(x, y, t);
        REQUIRE(v.shape() == Shape{5, 2});
        for (std::size_t n = 0; n < 5; ++n) {
            CHECK(v[2 * n] == 0.25f);
            CHECK(v[2 * n + 1] == -1.0f);
        }
        CHECK_THROWS_AS(f.field(random_input({5, 3}, rng), y, t), ShapeError);
    }
}
