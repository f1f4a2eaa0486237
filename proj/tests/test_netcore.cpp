#include <doctest.h>

#include <cmath>
#include <numeric>
#include <thread>

#include "ganproj/error.hpp"
#include "ganproj/netcore.hpp"
#include "ganproj/rng.hpp"
#include "ganproj/selfcheck.hpp"

using namespace ganproj;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

// Direct-summation transposed convolution: every input pixel scatters a
// weighted copy of the kernel onto the (uncropped) output, then pad is cropped.
Tensor naive_tconv(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int cin = int(x.dim(0)), h = int(x.dim(1)), wd = int(x.dim(2));
    const int cout = int(w.dim(1)), k = int(w.dim(2));
    const int full_h = (h - 1) * stride + k, full_w = (wd - 1) * stride + k;
    const int oh = full_h - 2 * pad, ow = full_w - 2 * pad;
    Tensor out({std::size_t(cout), std::size_t(oh), std::size_t(ow)});
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j)
                    for (int a = 0; a < k; ++a)
                        for (int b = 0; b < k; ++b) {
                            const int y = i * stride + a - pad, xx = j * stride + b - pad;
                            if (y < 0 || y >= oh || xx < 0 || xx >= ow) continue;
                            out[(co * oh + y) * ow + xx] +=
                                x[(ci * h + i) * wd + j] * w[((ci * cout + co) * k + a) * k + b];
                        }
    return out;
}

}  // namespace

TEST_CASE("loss_mse on small vectors") {
    Tensor a({10}, 0.0), b({10}, 1.0);
    CHECK(loss_mse(a, a) == 0.0);
    CHECK(loss_mse(a, b) == 1.0);
    Tensor c({3}, std::vector<double>{1, 2, 3}), d({3}, std::vector<double>{2, 2, 5});
    CHECK(loss_mse(c, d) == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(loss_mse(a, c), ShapeError);
}

TEST_CASE("identity generator maps z to itself") {
    const GeneratorNet net = make_identity_generator(2);
    const Tensor img = gen_forward(net, LatentVector{0.3, -0.7});
    REQUIRE(img.size() == 2);
    CHECK(img[0] == 0.3);
    CHECK(img[1] == -0.7);
}

TEST_CASE("latent gradient of the identity net") {
    const GeneratorNet net = make_identity_generator(1);
    Tensor target(net.image_shape().hwc(), 0.0);
    const auto g = gen_backward_z(net, LatentVector{0.5}, target);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("toy generator output shape, range and determinism") {
    const GeneratorNet net = make_dcgan_generator(GeneratorProfile::toy(), 7);
    CHECK(net.input_dim() == 16);
    CHECK(net.image_shape() == ImageShape{32, 32, 1});
    const LatentVector zero(16, 0.0);
    const Tensor a = gen_forward(net, zero), b = gen_forward(net, zero);
    CHECK(a.shape() == Shape{32, 32, 1});
    CHECK(a == b);
    RandomStream rng(3);
    for (int t = 0; t < 5; ++t) {
        LatentVector z(16);
        for (double& v : z.values()) v = rng.uniform_pm1();
        const Tensor img = gen_forward(net, z);
        for (double v : img.values()) CHECK(std::abs(v) <= 1.0);
    }
    const GeneratorNet full = make_dcgan_generator(GeneratorProfile::full(), 7);
    CHECK(gen_forward(full, LatentVector(100, 0.1)).shape() == Shape{32, 32, 3});
}

TEST_CASE("generator layer stack") {
    const GeneratorNet net = make_dcgan_generator(GeneratorProfile::toy(), 1);
    const std::vector<std::string> kinds = {"dense",      "reshape", "batch_norm",       "relu",
                                            "conv_transpose2d", "batch_norm", "relu", "conv_transpose2d",
                                            "batch_norm", "relu",    "conv_transpose2d", "tanh"};
    REQUIRE(net.body().size() == kinds.size());
    for (std::size_t i = 0; i < kinds.size(); ++i) CHECK(layer_kind(net.body().layer(i)) == kinds[i]);
    CHECK(net.body().layer_output_shape(0) == Shape{2048});
    CHECK(net.body().layer_output_shape(4) == Shape{64, 8, 8});
    CHECK(net.body().layer_output_shape(7) == Shape{32, 16, 16});
    CHECK(net.body().layer_output_shape(10) == Shape{1, 32, 32});
}

TEST_CASE("dense layer matches a hand loop") {
    RandomStream rng(11);
    const Tensor w = random_tensor({3, 4}, rng), bias = random_tensor({3}, rng), x = random_tensor({2, 4}, rng);
    Sequential net({4}, {layers::Dense{w, bias}});
    const Tensor y = net.forward(x, Mode::inference);
    REQUIRE(y.shape() == Shape{2, 3});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 3; ++o) {
            double s = bias[o];
            for (std::size_t i = 0; i < 4; ++i) s += w[o * 4 + i] * x[n * 4 + i];
            CHECK(y[n * 3 + o] == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("batch norm statistics") {
    RandomStream rng(5);
    layers::BatchNorm bn{Tensor({2}, std::vector<double>{1.5, 0.5}), Tensor({2}, std::vector<double>{0.1, -0.2}),
                         Tensor({2}, std::vector<double>{0.3, -0.1}), Tensor({2}, std::vector<double>{2.0, 0.5})};
    Sequential net({2, 2, 2}, {bn});
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);

    SUBCASE("inference uses running statistics") {
        const Tensor y = net.forward(x, Mode::inference);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t c = (i / 4) % 2;
            const double want = bn.gamma[c] * (x[i] - bn.running_mean[c]) / std::sqrt(bn.running_var[c] + 1e-5) +
                                bn.beta[c];
            CHECK(y[i] == doctest::Approx(want).epsilon(1e-14));
        }
    }
    SUBCASE("training normalizes by batch statistics and commits unbiased variance") {
        ForwardTrace trace;
        const Tensor y = net.forward(x, Mode::training, &trace);
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<double> vals;
            for (std::size_t i = 0; i < x.size(); ++i)
                if ((i / 4) % 2 == c) vals.push_back(x[i]);
            const double m = std::accumulate(vals.begin(), vals.end(), 0.0) / double(vals.size());
            double ss = 0;
            for (double v : vals) ss += (v - m) * (v - m);
            const double var = ss / double(vals.size());
            for (std::size_t i = 0; i < x.size(); ++i)
                if ((i / 4) % 2 == c)
                    CHECK(y[i] == doctest::Approx(bn.gamma[c] * (x[i] - m) / std::sqrt(var + 1e-5) + bn.beta[c])
                                      .epsilon(1e-12));
            net.commit_batch_stats(trace);
            const auto& after = std::get<layers::BatchNorm>(net.layer(0));
            CHECK(after.running_mean[c] == doctest::Approx(0.9 * bn.running_mean[c] + 0.1 * m).epsilon(1e-14));
            const double unbiased = ss / double(vals.size() - 1);
            CHECK(after.running_var[c] == doctest::Approx(0.9 * bn.running_var[c] + 0.1 * unbiased).epsilon(1e-14));
            net = Sequential({2, 2, 2}, {bn});
        }
    }
}

TEST_CASE("conv2d_transpose against direct summation") {
    SUBCASE("2x2 ones kernel, stride 2") {
        const Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
        const Tensor w({1, 1, 2, 2}, 1.0);
        const Tensor y = conv2d_transpose(x, w, 2, 0);
        const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
        CHECK(y.shape() == Shape{1, 4, 4});
        CHECK(std::vector<double>(y.storage().begin(), y.storage().end()) == want);
    }
    SUBCASE("1x1 identity kernel") {
        RandomStream rng(2);
        const Tensor x = random_tensor({1, 5, 3}, rng);
        const Tensor y = conv2d_transpose(x, Tensor({1, 1, 1, 1}, 1.0), 1, 0);
        CHECK(y.storage() == x.storage());
    }
    SUBCASE("zero kernel") {
        RandomStream rng(2);
        const Tensor y = conv2d_transpose(random_tensor({3, 4, 4}, rng), Tensor({3, 2, 4, 4}, 0.0), 2, 1);
        for (double v : y.values()) CHECK(v == 0.0);
    }
    SUBCASE("random shapes") {
        RandomStream rng(9);
        for (int t = 0; t < 20; ++t) {
            const std::size_t cin = 1 + t % 3, cout = 1 + (t / 3) % 3, h = 2 + t % 4, w = 1 + t % 5;
            const int k = 1 + t % 4, stride = 1 + t % 2, pad = (k > 2) ? t % 2 : 0;
            const Tensor x = random_tensor({cin, h, w}, rng), ker = random_tensor({cin, cout, std::size_t(k), std::size_t(k)}, rng);
            const Tensor got = conv2d_transpose(x, ker, stride, pad), want = naive_tconv(x, ker, stride, pad);
            REQUIRE(got.shape() == want.shape());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("finite_diff_grad on analytic functions") {
    auto sq = [](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; };
    const std::vector<double> v1 = {1, -2};
    auto g = finite_diff_grad(sq, v1);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(-4.0).epsilon(1e-8));
    auto prod = [](std::span<const double> v) { return v[0] * v[1]; };
    const std::vector<double> v2 = {3, 5};
    g = finite_diff_grad(prod, v2);
    CHECK(g[0] == doctest::Approx(5.0).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(3.0).epsilon(1e-8));
    g = finite_diff_grad([](std::span<const double>) { return 4.0; }, v2);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
}

TEST_CASE("latent gradient vanishes at an exact fit") {
    const GeneratorNet net = make_random_toy_generator(4);
    RandomStream rng(4);
    LatentVector z(16);
    for (double& v : z.values()) v = rng.uniform_pm1();
    const auto g = gen_backward_z(net, z, gen_forward(net, z));
    for (double v : g) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("latent gradient against central differences") {
    const GeneratorNet net = make_random_toy_generator(21);
    // Sign pattern of every ReLU input; a change across the stencil means a kink
    // lies inside it and the difference quotient is not a derivative estimate.
    auto pattern = [&](std::span<const double> zz) {
        ForwardTrace tr;
        gen_forward_batch(net, Tensor({1, zz.size()}, std::vector<double>(zz.begin(), zz.end())), Mode::inference, &tr);
        std::vector<bool> out;
        for (std::size_t i = 0; i < net.body().size(); ++i)
            if (layer_kind(net.body().layer(i)) == "relu")
                for (double v : tr.activations[i].values()) out.push_back(v > 0);
        return out;
    };
    RandomStream rng(21);
    const double eps = 1e-4;
    int compared = 0;
    for (int t = 0; t < 100 && compared < 5; ++t) {
        LatentVector z(16);
        for (double& v : z.values()) v = rng.uniform_pm1();
        const auto base = pattern(z.values());
        bool kink = false;
        for (std::size_t i = 0; i < 16 && !kink; ++i)
            for (double s : {-eps, eps}) {
                std::vector<double> zz(z.storage());
                zz[i] += s;
                kink |= pattern(zz) != base;
            }
        if (kink) continue;
        Tensor target(net.image_shape().hwc());
        for (double& v : target.values()) v = rng.uniform_pm1();
        auto f = [&](std::span<const double> zz) {
            return loss_mse(target, gen_forward(net, LatentVector(std::vector<double>(zz.begin(), zz.end()))));
        };
        CHECK(max_relative_error(gen_backward_z(net, z, target), finite_diff_grad(f, z.values(), eps)) <= 1e-5);
        ++compared;
    }
    CHECK(compared == 5);
}

TEST_CASE("parameter gradients") {
    SUBCASE("zero upstream gives zero gradients") {
        const GeneratorNet net = make_dcgan_generator(GeneratorProfile::toy(), 2);
        RandomStream rng(2);
        const Tensor z = random_tensor({2, 16}, rng, 0.5);
        CHECK(gen_backward_params(net, z, Tensor({2, 32, 32, 1}, 0.0)).all_zero());
    }
    SUBCASE("single dense layer: d(sum Wz)/dW = outer(1, z)") {
        RandomStream rng(8);
        const Tensor a = random_tensor({6, 3}, rng), b = random_tensor({6}, rng);
        const GeneratorNet net = make_linear_generator(a, b, ImageShape{2, 3, 1});
        const Tensor z({1, 3}, std::vector<double>{0.2, -0.5, 0.9});
        const ParamGrads g = gen_backward_params(net, z, Tensor({1, 2, 3, 1}, 1.0));
        REQUIRE(g.grads.size() == 2);
        for (std::size_t o = 0; o < 6; ++o)
            for (std::size_t i = 0; i < 3; ++i) CHECK(g.grads[0][o * 3 + i] == doctest::Approx(z[i]).epsilon(1e-15));
        for (std::size_t o = 0; o < 6; ++o) CHECK(g.grads[1][o] == 1.0);
    }
}

TEST_CASE("discriminator shapes") {
    const DiscriminatorNet d = make_dcgan_discriminator(1, 3);
    CHECK(d.body().input_shape() == Shape{1, 32, 32});
    CHECK(d.body().output_shape() == Shape{1});
    const DiscriminatorNet narrow = make_dcgan_discriminator(3, 3, 8);
    CHECK(narrow.body().input_shape() == Shape{3, 32, 32});
    CHECK(narrow.body().layer_output_shape(0) == Shape{8, 16, 16});
}

TEST_CASE("concurrent forward passes agree") {
    const GeneratorNet net = make_random_toy_generator(21);
    const LatentVector z(16, -0.4);
    const Tensor ref = gen_forward(net, z);
    std::vector<Tensor> outs(4);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < outs.size(); ++t)
        threads.emplace_back([&, t] {
            for (int k = 0; k < 5; ++k) outs[t] = gen_forward(net, z);
        });
    for (auto& th : threads) th.join();
    for (const Tensor& o : outs) CHECK(o == ref);
}
