#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "ganproj/error.hpp"
#include "ganproj/metrics.hpp"
#include "ganproj/recovery.hpp"
#include "ganproj/selfcheck.hpp"

using namespace ganproj;

namespace {

RecoveryConfig quick(ClipStrategy s, std::size_t iters = 300, std::size_t restarts = 1) {
    RecoveryConfig c;
    c.strategy = s;
    c.max_iters = iters;
    c.restarts = restarts;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("projected clipping") {
    CHECK(clip_projected(LatentVector{1.3, -0.4, -2.0}) == LatentVector{1.0, -0.4, -1.0});
    CHECK(clip_projected(LatentVector{0.2, -0.9}) == LatentVector{0.2, -0.9});
    CHECK(clip_projected(LatentVector{-1.0, 1.0}) == LatentVector{-1.0, 1.0});
}

TEST_CASE("stochastic clipping") {
    RandomStream rng(1);
    CHECK(clip_stochastic(LatentVector{0.2, 0.9}, rng) == LatentVector{0.2, 0.9});
    std::vector<bool> flags;
    const LatentVector both = clip_stochastic(LatentVector{-7.0, 7.0}, rng, &flags);
    CHECK(flags == std::vector<bool>{true, true});
    for (double v : both.values()) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
    }
    // boundary values are in range and stay
    CHECK(clip_stochastic(LatentVector{1.0, -1.0}, rng) == LatentVector{1.0, -1.0});

    SUBCASE("resampled values are uniform on (-1, 1)") {
        const std::size_t n = 10000;
        std::vector<double> u;
        for (std::size_t i = 0; i < n; ++i) {
            const LatentVector z = clip_stochastic(LatentVector{1.5, -0.3}, rng);
            CHECK(z[1] == -0.3);
            u.push_back(z[0]);
        }
        std::sort(u.begin(), u.end());
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double cdf = (u[i] + 1.0) / 2.0;
            d = std::max({d, std::abs(double(i + 1) / n - cdf), std::abs(cdf - double(i) / n)});
        }
        // Kolmogorov-Smirnov critical value at alpha = 0.01
        CHECK(d < 1.628 / std::sqrt(double(n)));
    }
}

TEST_CASE("strategy names and config validation") {
    CHECK(parse_strategy("none") == ClipStrategy::none);
    CHECK(parse_strategy("projected") == ClipStrategy::projected);
    CHECK(to_string(ClipStrategy::stochastic) == "stochastic");
    CHECK_THROWS_AS(parse_strategy("clamp"), ConfigError);
    RecoveryConfig c;
    c.step_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.max_iters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.restarts = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("identity net recovery") {
    const GeneratorNet net = make_identity_generator(4);
    const Tensor target(net.image_shape().hwc(), 0.5);
    RecoveryConfig cfg = quick(ClipStrategy::none, 5000);
    cfg.tol = 1e-20;  // run to convergence rather than stopping at the default loss floor
    const RecoveryResult r = recover(net, target, cfg);
    for (double v : r.z_hat.values()) CHECK(std::abs(v - 0.5) < 1e-6);
    CHECK(r.final_loss < 1e-12);
    CHECK(r.final_loss == loss_mse(target, gen_forward(net, r.z_hat)));
    // unconstrained descent on a convex quadratic at a stable step never goes up
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
}

TEST_CASE("linear net recovery against the normal equations") {
    RandomStream rng(3);
    const std::size_t d = 8, m = 64;
    Tensor a({m, d}), b({m});
    for (double& v : a.values()) v = rng.normal(0.0, 0.5);
    for (double& v : b.values()) v = rng.normal(0.0, 0.1);
    const GeneratorNet net = make_linear_generator(a, b, ImageShape{8, 8, 1});
    LatentVector z_star(d);
    for (double& v : z_star.values()) v = rng.uniform(-0.5, 0.5);
    const Tensor target = gen_forward(net, z_star);

    Eigen::MatrixXd A(m, d);
    Eigen::VectorXd y(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) A(i, j) = a[i * d + j];
        y(i) = target[i] - b[i];
    }
    const Eigen::VectorXd z_ls = (A.transpose() * A).ldlt().solve(A.transpose() * y);

    RecoveryConfig cfg = quick(ClipStrategy::stochastic, 5000);
    cfg.tol = 1e-16;
    const RecoveryResult r = recover(net, target, cfg);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(r.z_hat[j] - z_ls(j)) < 1e-4);
}

TEST_CASE("recovery on a random toy net") {
    const GeneratorNet net = make_random_toy_generator(8);
    RandomStream rng(8);
    LatentVector z(16);
    for (double& v : z.values()) v = rng.uniform(-0.8, 0.8);
    const Tensor clean = gen_forward(net, z);

    SUBCASE("on-manifold target, sigma 0") {
        const Denoised out = denoise(net, clean, quick(ClipStrategy::stochastic, 3000, 3));
        CHECK(psnr(out.image, denormalize(clean)) >= 40.0);
        for (double v : out.result.z_hat.values()) CHECK(std::abs(v) <= 1.0);
    }
    SUBCASE("all-black input") {
        const Denoised out = denoise(net, Image(32, 32, 1, 0), quick(ClipStrategy::projected, 200, 2));
        CHECK(std::isfinite(out.result.final_loss));
        CHECK(out.image.shape() == ImageShape{32, 32, 1});
    }
    SUBCASE("deterministic, batch equals one by one") {
        const RecoveryConfig cfg = quick(ClipStrategy::stochastic, 100, 2);
        const std::vector<Tensor> targets = {clean, gen_forward(net, LatentVector(16, 0.1))};
        const auto batch = recover_batch(net, targets, cfg, 2, 5);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const RecoveryResult one = recover(net, targets[i], cfg, 5 + i);
            CHECK(one.z_hat == batch[i].z_hat);
            CHECK(one.loss_trace == batch[i].loss_trace);
            CHECK(one.restart_index == batch[i].restart_index);
        }
        const std::string csv = trace_csv(batch, {5, 6});
        CHECK(csv.rfind("image_id,restart,iter,loss\n5,", 0) == 0);
    }
    SUBCASE("stall detection stops early") {
        RecoveryConfig cfg = quick(ClipStrategy::none, 5000);
        cfg.step_size = 1e-9;
        cfg.tol = 1e-6;
        cfg.stall_window = 20;
        const RecoveryResult r = recover(net, clean, cfg);
        CHECK(r.iterations_used < 100);
    }
    SUBCASE("shape mismatch and non-finite targets") {
        CHECK_THROWS_AS(recover(net, Tensor({16, 16, 1}), quick(ClipStrategy::none)), ShapeError);
        Tensor bad = clean;
        bad[3] = std::nan("");
        CHECK_THROWS_AS(recover(net, bad, quick(ClipStrategy::none)), NumericError);
    }
}

TEST_CASE("observer sees clipped iterates") {
    const GeneratorNet net = make_identity_generator(3);
    Tensor target(net.image_shape().hwc());
    target[0] = 3.0;  // pulls z_0 outside the cube
    target[1] = -0.2;
    target[2] = -4.0;
    RecoveryConfig cfg = quick(ClipStrategy::stochastic, 50, 2);
    std::size_t events = 0, resampled = 0;
    recover(net, target, cfg, 0, [&](const IterationEvent& e) {
        ++events;
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs((*e.z)[i]) <= 1.0);
            if ((*e.resampled)[i]) {
                ++resampled;
                CHECK(std::abs((*e.z)[i]) < 1.0);
            }
        }
    });
    CHECK(events > 0);
    CHECK(resampled > 0);
}

TEST_CASE("restarts are independent") {
    const GeneratorNet net = make_random_toy_generator(4);
    const Tensor target = gen_forward(net, LatentVector(16, 0.3));
    // per-restart trajectories, recorded through the observer
    auto trajectories = [&](std::size_t restarts, double* final_loss) {
        std::vector<std::vector<double>> out(restarts);
        const RecoveryResult r = recover(net, target, quick(ClipStrategy::stochastic, 60, restarts), 2,
                                         [&](const IterationEvent& e) { out[e.restart].push_back(e.loss); });
        *final_loss = r.final_loss;
        return out;
    };
    double f3 = 0, f2 = 0;
    const auto three = trajectories(3, &f3);
    const auto two = trajectories(2, &f2);
    CHECK(two[0] == three[0]);
    CHECK(two[1] == three[1]);
    CHECK(three[2] != three[0]);
    // the winner is the best loss over all restarts, whatever their order
    double best = INFINITY;
    for (const auto& t : three) best = std::min(best, *std::min_element(t.begin(), t.end()));
    CHECK(f3 == best);
    CHECK(f3 <= f2);
}
