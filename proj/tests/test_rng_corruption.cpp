#include <doctest.h>

#include <cmath>
#include <set>

#include "ganproj/corruption.hpp"
#include "ganproj/error.hpp"
#include "ganproj/rng.hpp"
#include "mt_oracle.hpp"

using namespace ganproj;

TEST_CASE("mt19937_64 reference value") {
    Mt64Oracle o(5489);
    std::uint64_t x = 0;
    for (int i = 0; i < 10000; ++i) x = o.next();
    CHECK(x == 9981545732273789042ULL);
}

TEST_CASE("stream matches the reference construction") {
    for (std::uint64_t seed : std::vector<std::uint64_t>{0, 1, 123456789, derive_seed(7, {1, 2})}) {
        RandomStream s(seed);
        Mt64Oracle o(seed);
        for (int i = 0; i < 1000; ++i) REQUIRE(s.normal() == o.normal());
        for (int i = 0; i < 1000; ++i) REQUIRE(s.uniform01() == o.uniform01());
    }
}

TEST_CASE("uniforms stay strictly inside the unit interval") {
    RandomStream s(3);
    for (int i = 0; i < 100000; ++i) {
        const double u = s.uniform01(), v = s.uniform_pm1();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(std::abs(v) < 1.0);
    }
}

TEST_CASE("derived seeds separate substreams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 50; ++a)
        for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(1, {a, b}));
    CHECK(seen.size() == 2500);
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {}) != derive_seed(2, {}));
    CHECK(derive_seed(9, {4}) == derive_seed(9, {4}));
}

TEST_CASE("noise on a constant image") {
    Image img(320, 320, 1, 100);  // 102400 samples
    const NoiseModel model{127.0, 11};
    const NoisyImage n = add_gaussian_noise(img, model);
    const Tensor clean = normalize(img);
    double sum = 0, ss = 0, lag = 0;
    std::vector<double> e(n.target.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = (n.target[i] - clean[i]) * 127.5;
        sum += e[i];
    }
    const double mean = sum / double(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        ss += (e[i] - mean) * (e[i] - mean);
        if (i > 0) lag += (e[i] - mean) * (e[i - 1] - mean);
    }
    const double sd = std::sqrt(ss / double(e.size() - 1));
    CHECK(std::abs(sd - 127.0) / 127.0 < 0.02);
    CHECK(std::abs(mean) < 1.0);
    CHECK(std::abs(lag / ss) < 0.02);
    // the target is not clamped, the preview is
    bool outside = false;
    for (double v : n.target.values()) outside |= std::abs(v) > 1.0;
    CHECK(outside);
    CHECK(n.preview == denormalize(n.target));

    // different images draw uncorrelated noise
    const NoisyImage other = add_gaussian_noise(img, model, 1);
    double cross = 0, ss2 = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double f = (other.target[i] - clean[i]) * 127.5;
        cross += (e[i] - mean) * f;
        ss2 += f * f;
    }
    CHECK(std::abs(cross / std::sqrt(ss * ss2)) < 0.02);
}

TEST_CASE("noise determinism and zero sigma") {
    Image img(32, 32, 1, 40);
    const NoisyImage zero = add_gaussian_noise(img, NoiseModel{0.0, 5});
    CHECK(zero.target == normalize(img));
    CHECK(zero.preview == img);
    const NoiseModel m{50.0, 5};
    CHECK(add_gaussian_noise(img, m, 3).target == add_gaussian_noise(img, m, 3).target);
    CHECK(add_gaussian_noise(img, m, 3).target != add_gaussian_noise(img, m, 4).target);
    CHECK_THROWS_AS(NoiseModel({-1.0, 0}).validate(), ConfigError);

    // noise image k equals the documented stream: seed -> derive_seed(seed, {k}), one normal per element
    const NoisyImage n = add_gaussian_noise(img, m, 3);
    Mt64Oracle o(derive_seed(5, {3}));
    const Tensor clean = normalize(img);
    for (std::size_t i = 0; i < clean.size(); ++i) REQUIRE(n.target[i] == clean[i] + 50.0 / 127.5 * o.normal());
}
