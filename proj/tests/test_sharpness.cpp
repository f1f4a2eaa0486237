#include <doctest.h>

#include <cmath>

#include "ganproj/error.hpp"
#include "ganproj/selfcheck.hpp"
#include "ganproj/sharpness.hpp"
#include "support.hpp"

using namespace ganproj;

TEST_CASE("apply_sharpness adds then clamps") {
    SharpnessAttribute attr{127, {0.2, 0.2}, 10, 1};
    const LatentVector z = apply_sharpness(LatentVector{0.1, -0.2}, attr);
    CHECK(z[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(z[1] == 0.0);
    attr.vector = {0.3, 0.3};
    CHECK(apply_sharpness(LatentVector{0.9, -0.5}, attr)[0] == 1.0);
    attr.vector = {0.0, 0.0};
    CHECK(apply_sharpness(LatentVector{0.9, -0.5}, attr) == LatentVector{0.9, -0.5});
    attr.vector = {0.1};
    CHECK_THROWS_AS(apply_sharpness(LatentVector{0.9, -0.5}, attr), ShapeError);
}

TEST_CASE("sharpness of an exactly invertible net is zero") {
    const GeneratorNet net = make_identity_generator(4);
    RecoveryConfig cfg;
    cfg.strategy = ClipStrategy::none;
    cfg.tol = 1e-20;
    const auto attrs = estimate_sharpness(net, {0.0}, 1, cfg, 3);
    REQUIRE(attrs.size() == 1);
    CHECK(attrs[0].n_samples == 1);
    for (double v : attrs[0].vector) CHECK(std::abs(v) <= 10 * std::sqrt(cfg.tol));
}

TEST_CASE("linear net estimate is unbiased") {
    RandomStream rng(12);
    const std::size_t d = 8;
    Tensor a({64, d}), b({64});
    for (double& v : a.values()) v = rng.normal(0.0, 0.5);
    for (double& v : b.values()) v = rng.normal(0.0, 0.1);
    const GeneratorNet net = make_linear_generator(a, b, ImageShape{8, 8, 1});
    RecoveryConfig cfg;
    cfg.restarts = 1;
    cfg.max_iters = 2000;
    const auto attrs = estimate_sharpness(net, {25.0}, 1000, cfg, 5, {0.5, 0});
    double worst = 0;
    for (double v : attrs[0].vector) worst = std::max(worst, std::abs(v));
    MESSAGE("linear-net |z_sharp|_inf = " << worst);
    CHECK(worst < 0.05);
}

TEST_CASE("several levels and reproducibility") {
    const GeneratorNet net = make_random_toy_generator(2);
    RecoveryConfig cfg;
    cfg.max_iters = 40;
    cfg.restarts = 1;
    const auto a = estimate_sharpness(net, {127.0, 184.0}, 3, cfg, 9, {1.0, 2});
    const auto b = estimate_sharpness(net, {127.0, 184.0}, 3, cfg, 9, {1.0, 1});
    REQUIRE(a.size() == 2);
    CHECK(a[0].sigma == 127.0);
    CHECK(a[1].sigma == 184.0);
    CHECK(a[0].vector == b[0].vector);
    CHECK(a[1].vector == b[1].vector);
    CHECK(a[0].vector != a[1].vector);
    CHECK_THROWS_AS(estimate_sharpness(net, {127.0}, 0, cfg, 9), ConfigError);

    SUBCASE("zero attribute reduces to plain denoising") {
        const Tensor target = gen_forward(net, LatentVector(16, 0.2));
        SharpnessAttribute zero{127.0, std::vector<double>(16, 0.0), 3, 9};
        CHECK(denoise_sa(net, target, zero, cfg, 4).image == denoise(net, target, cfg, 4).image);
    }
    SUBCASE("json round trip") {
        TempDir dir;
        save_sharpness(a[1], dir / "s.json");
        const SharpnessAttribute back = load_sharpness(dir / "s.json");
        CHECK(back.sigma == a[1].sigma);
        CHECK(back.vector == a[1].vector);
        CHECK(back.n_samples == 3);
        CHECK(back.seed == 9);
        CHECK_THROWS_AS(sharpness_from_json(nlohmann::json{{"sigma", 1}}), FormatError);
    }
}

TEST_CASE("estimates concentrate as n doubles") {
    RandomStream rng(13);
    Tensor a({64, 8}), b({64});
    for (double& v : a.values()) v = rng.normal(0.0, 0.5);
    for (double& v : b.values()) v = rng.normal(0.0, 0.1);
    const GeneratorNet net = make_linear_generator(a, b, ImageShape{8, 8, 1});
    RecoveryConfig cfg;
    cfg.restarts = 1;
    cfg.max_iters = 2000;
    auto norm_diff = [](const SharpnessAttribute& x, const SharpnessAttribute& y) {
        double s = 0;
        for (std::size_t i = 0; i < x.vector.size(); ++i) s += (x.vector[i] - y.vector[i]) * (x.vector[i] - y.vector[i]);
        return std::sqrt(s);
    };
    std::vector<SharpnessAttribute> est;
    for (std::size_t n : {100, 200, 400})
        est.push_back(estimate_sharpness(net, {127.0}, n, cfg, 21, {0.5, 0})[0]);
    // successive gaps shrink like 1/sqrt(n): their ratio is about sqrt(2)
    const double ratio = norm_diff(est[0], est[1]) / norm_diff(est[1], est[2]);
    MESSAGE("gap ratio " << ratio);
    CHECK(ratio < 3.0);
    CHECK(ratio > 1.0 / 3.0);
}
