#include "ganproj/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ganproj/error.hpp"
#include "ganproj/recovery.hpp"
#include "ganproj/rng.hpp"
#include "ganproj/training.hpp"

namespace ganproj {

namespace {

constexpr std::uint64_t kLayerTag = 0x6c61796572;  // "layer"
constexpr std::uint64_t kTripleTag = 0x747269706c65;  // "triple"

Tensor random_tensor(Shape shape, RandomStream& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, sd);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Shape with_batch(std::size_t n, const Shape& s) {
    Shape out{n};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

void corrupt(std::span<double> g) {
    double m = 0.0;
    for (double v : g) m = std::max(m, std::abs(v));
    if (!g.empty()) g[0] += 1e-3 * m + 1e-3;
}

/// Checks input and parameter gradients of sum(w * layer(x)) for one layer.
CheckResult check_layer(Layer layer, const Shape& in_shape, std::size_t batch, Mode mode, RandomStream& rng,
                        const SelfcheckOptions& opt) {
    const std::string kind = layer_kind(layer);
    CheckResult res{"layer " + kind + (mode == Mode::training ? " (training)" : ""), 0.0, opt.tolerance, false, ""};
    Sequential seq(in_shape, {std::move(layer)});
    Tensor x = random_tensor(with_batch(batch, in_shape), rng);
    // Keep samples off the ReLU kink.
    for (double& v : x.values())
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
    const Tensor w = random_tensor(with_batch(batch, seq.output_shape()), rng);

    ForwardTrace trace;
    seq.forward(x, mode, &trace);
    ParamGrads grads = seq.zero_grads();
    Tensor dx = seq.backward(trace, w, mode, &grads, true);
    if (opt.inject_fault == kind) corrupt(dx.storage());

    const Shape xs = x.shape();
    auto fx = [&](std::span<const double> v) {
        return dot(seq.forward(Tensor(xs, std::vector<double>(v.begin(), v.end())), mode), w);
    };
    res.max_rel_err = max_relative_error(dx.values(), finite_diff_grad(fx, x.values(), opt.fd_eps));

    auto params = seq.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        // Up to 24 coordinates per tensor, spread evenly.
        const std::size_t count = std::min<std::size_t>(param.size(), 24);
        std::vector<std::size_t> idx(count);
        for (std::size_t k = 0; k < count; ++k) idx[k] = k * param.size() / count;
        std::vector<double> analytic(count), numeric(count);
        for (std::size_t k = 0; k < count; ++k) {
            analytic[k] = grads.grads[p][idx[k]];
            const double orig = param[idx[k]];
            param[idx[k]] = orig + opt.fd_eps;
            const double fp = dot(seq.forward(x, mode), w);
            param[idx[k]] = orig - opt.fd_eps;
            const double fm = dot(seq.forward(x, mode), w);
            param[idx[k]] = orig;
            numeric[k] = (fp - fm) / (2.0 * opt.fd_eps);
        }
        res.max_rel_err = std::max(res.max_rel_err, max_relative_error(analytic, numeric));
    }
    res.passed = res.max_rel_err <= opt.tolerance;
    if (!res.passed) res.detail = "backward pass of layer '" + kind + "' disagrees with finite differences";
    return res;
}

double naive_tconv_at(const Tensor& x, const Tensor& w, int stride, int pad, std::size_t co, long oy, long ox) {
    const long cin = static_cast<long>(x.dim(0)), h = static_cast<long>(x.dim(1)), wd = static_cast<long>(x.dim(2));
    const long cout = static_cast<long>(w.dim(1)), k = static_cast<long>(w.dim(2));
    double s = 0.0;
    for (long ci = 0; ci < cin; ++ci)
        for (long iy = 0; iy < h; ++iy)
            for (long ix = 0; ix < wd; ++ix)
                for (long ky = 0; ky < k; ++ky)
                    for (long kx = 0; kx < k; ++kx) {
                        if (iy * stride - pad + ky != oy || ix * stride - pad + kx != ox) continue;
                        s += x[static_cast<std::size_t>((ci * h + iy) * wd + ix)] *
                             w[static_cast<std::size_t>(((ci * cout + static_cast<long>(co)) * k + ky) * k + kx)];
                    }
    return s;
}

CheckResult check_conv_transpose(RandomStream& rng, const SelfcheckOptions& opt) {
    CheckResult res{"conv2d_transpose vs direct summation (50 cases)", 0.0, 1e-12, true, ""};
    for (int c = 0; c < 50; ++c) {
        const std::size_t cin = 1 + rng.next_u64() % 3, cout = 1 + rng.next_u64() % 3;
        const std::size_t h = 1 + rng.next_u64() % 4, wd = 1 + rng.next_u64() % 4;
        const int k = 1 + static_cast<int>(rng.next_u64() % 4);
        const int stride = 1 + static_cast<int>(rng.next_u64() % 2);
        int pad = static_cast<int>(rng.next_u64() % 2);
        if (stride * (static_cast<int>(std::min(h, wd)) - 1) + k - 2 * pad <= 0) pad = 0;
        const Tensor x = random_tensor({cin, h, wd}, rng);
        const Tensor w = random_tensor({cin, cout, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
        const Tensor y = conv2d_transpose(x, w, stride, pad);
        std::vector<double> ref(y.size());
        const std::size_t oh = y.dim(1), ow = y.dim(2);
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    ref[(co * oh + oy) * ow + ox] =
                        naive_tconv_at(x, w, stride, pad, co, static_cast<long>(oy), static_cast<long>(ox));
        std::vector<double> got(y.values().begin(), y.values().end());
        if (opt.inject_fault == "conv_transpose2d") corrupt(got);
        double err = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(got[i] - ref[i]));
        res.max_rel_err = std::max(res.max_rel_err, err);
    }
    res.passed = res.max_rel_err <= res.tolerance;
    if (!res.passed) res.detail = "layer 'conv_transpose2d' forward disagrees with the direct definition";
    return res;
}

std::size_t worst_index(const std::vector<double>& a, const std::vector<double>& b) {
    std::size_t w = 0;
    for (std::size_t i = 1; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) > std::abs(a[w] - b[w])) w = i;
    return w;
}

/// Sign of every (leaky) ReLU input recorded in a trace.
std::vector<char> kink_pattern(const Sequential& body, const ForwardTrace& trace) {
    std::vector<char> out;
    for (std::size_t i = 0; i < body.size(); ++i) {
        const Layer& l = body.layer(i);
        if (!std::holds_alternative<layers::Relu>(l) && !std::holds_alternative<layers::LeakyRelu>(l)) continue;
        for (double v : trace.activations[i].values()) out.push_back(v > 0);
    }
    return out;
}

struct Evaluation {
    double value = 0.0;
    std::vector<char> pattern;
};

/// Compares analytic parameter gradients with central differences on up to
/// `per_tensor` coordinates of each tensor. Coordinates whose stencil moves a
/// ReLU input across zero are skipped.
void compare_param_grads(Sequential& body, const ParamGrads& g, const std::function<Evaluation()>& eval,
                         const std::string& prefix, std::size_t per_tensor, const SelfcheckOptions& opt,
                         CheckResult& res) {
    const auto base = eval().pattern;
    auto params = body.parameters();
    const auto names = body.parameter_names();
    std::vector<double> analytic, numeric;
    std::vector<std::size_t> owner;
    std::size_t skipped = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        std::size_t taken = 0;
        for (std::size_t k = 0; k < param.size() && taken < per_tensor; ++k) {
            const std::size_t i = (k * 7919 + p) % param.size();
            const double orig = param[i];
            param[i] = orig + opt.fd_eps;
            const Evaluation plus = eval();
            param[i] = orig - opt.fd_eps;
            const Evaluation minus = eval();
            param[i] = orig;
            if (plus.pattern != base || minus.pattern != base) {
                ++skipped;
                continue;
            }
            analytic.push_back(g.grads[p][i]);
            numeric.push_back((plus.value - minus.value) / (2.0 * opt.fd_eps));
            owner.push_back(p);
            ++taken;
        }
    }
    if (opt.inject_fault == "parameters") corrupt(analytic);
    res.max_rel_err = max_relative_error(analytic, numeric);
    res.detail = std::to_string(analytic.size()) + " coordinates";
    if (!analytic.empty()) res.detail += ", worst " + prefix + names[owner[worst_index(analytic, numeric)]];
    if (skipped) res.detail += ", " + std::to_string(skipped) + " skipped (kink in stencil)";
    res.passed = res.max_rel_err <= opt.tolerance && !analytic.empty();
}

CheckResult check_gen_params(RandomStream& rng, const SelfcheckOptions& opt) {
    CheckResult res{"generator parameter gradients (training mode, batch 3)", 0.0, opt.tolerance, false, ""};
    GeneratorNet net = make_random_toy_generator(rng.next_u64(), 4);
    Tensor z({3, 4});
    for (double& v : z.values()) v = rng.uniform_pm1();
    const Tensor up = random_tensor({3, 32, 32, 1}, rng);
    const ParamGrads g = gen_backward_params(net, z, up);
    auto eval = [&] {
        ForwardTrace trace;
        const Tensor out = gen_forward_batch(net, z, Mode::training, &trace);
        return Evaluation{dot(out, up), kink_pattern(net.body(), trace)};
    };
    compare_param_grads(net.body(), g, eval, "generator.", 6, opt, res);
    return res;
}

CheckResult check_disc_loss(RandomStream& rng, const SelfcheckOptions& opt) {
    CheckResult res{"discriminator log-loss gradients (2-image batch)", 0.0, opt.tolerance, false, ""};
    DiscriminatorNet disc = make_dcgan_discriminator(1, rng.next_u64(), 8);
    // Larger weights keep leaky-ReLU inputs away from zero; the zero-initialized
    // output layer gets weights so every layer carries gradient.
    auto params = disc.body().parameters();
    for (std::size_t p = 0; p + 2 < params.size(); p += 2)
        for (double& v : params[p]->values()) v *= 10.0;
    for (double& v : params[params.size() - 2]->values()) v = rng.normal(0.0, 0.05);
    Tensor real({1, 32, 32, 1}), fake({1, 32, 32, 1});
    for (double& v : real.values()) v = rng.uniform_pm1();
    for (double& v : fake.values()) v = rng.uniform_pm1();
    Tensor both({2, 32, 32, 1});
    std::copy(real.storage().begin(), real.storage().end(), both.data());
    std::copy(fake.storage().begin(), fake.storage().end(), both.data() + real.size());
    const Tensor both_chw = hwc_to_chw(both);
    ParamGrads g = disc.body().zero_grads();
    disc_loss_and_grads(disc, real, fake, &g);
    auto eval = [&] {
        ForwardTrace trace;
        disc.body().forward(both_chw, Mode::training, &trace);
        return Evaluation{disc_loss_and_grads(disc, real, fake, nullptr), kink_pattern(disc.body(), trace)};
    };
    compare_param_grads(disc.body(), g, eval, "discriminator.", 8, opt, res);
    return res;
}

CheckResult check_identity_recovery() {
    CheckResult res{"recovery on the identity generator", 0.0, 1e-6, false, ""};
    const GeneratorNet net = make_identity_generator(4);
    RecoveryConfig cfg;
    cfg.strategy = ClipStrategy::none;
    cfg.tol = 1e-14;
    cfg.restarts = 1;
    const Tensor target({1, 4, 1}, 0.5);
    const RecoveryResult r = recover(net, target, cfg);
    for (std::size_t i = 0; i < 4; ++i) res.max_rel_err = std::max(res.max_rel_err, std::abs(r.z_hat[i] - 0.5));
    res.passed = res.max_rel_err <= res.tolerance && r.final_loss < 1e-12;
    return res;
}

struct Probe {
    /// Sign of every ReLU input.
    std::vector<char> pattern;
    Tensor image;
};

Probe probe(const GeneratorNet& net, std::span<const double> z) {
    ForwardTrace trace;
    Tensor out =
        net.body().forward(Tensor({1, z.size()}, std::vector<double>(z.begin(), z.end())), Mode::inference, &trace);
    Probe p;
    for (std::size_t i = 0; i < net.body().size(); ++i) {
        const Layer& l = net.body().layer(i);
        if (!std::holds_alternative<layers::Relu>(l) && !std::holds_alternative<layers::LeakyRelu>(l)) continue;
        for (double v : trace.activations[i].values()) p.pattern.push_back(v > 0);
    }
    p.image = (out.rank() == 4 ? chw_to_hwc(out) : out).reshaped(net.image_shape().hwc());
    return p;
}

}  // namespace

double max_relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    if (scale == 0.0) return 0.0;
    return diff / scale;
}

GeneratorNet make_random_toy_generator(std::uint64_t seed, std::size_t latent_dim) {
    GeneratorNet net = make_dcgan_generator({latent_dim, 1}, seed);
    RandomStream rng(derive_seed(seed, {0x63616c}));
    Tensor z({64, latent_dim});
    for (double& v : z.values()) v = rng.uniform_pm1();
    for (std::size_t i = 0; i < net.body().size(); ++i) {
        if (auto* bn = std::get_if<layers::BatchNorm>(&net.body().layer(i))) {
            for (double& v : bn->gamma.values()) v = rng.uniform(0.5, 1.5);
            for (double& v : bn->beta.values()) v = rng.normal(0.0, 0.1);
            bn->momentum = 0.0;
        }
    }
    ForwardTrace trace;
    gen_forward_batch(net, z, Mode::training, &trace);
    net.body().commit_batch_stats(trace);
    for (std::size_t i = 0; i < net.body().size(); ++i) {
        if (auto* bn = std::get_if<layers::BatchNorm>(&net.body().layer(i))) bn->momentum = 0.9;
    }
    net.set_mode(Mode::inference);
    return net;
}

CheckResult check_latent_gradients(std::uint64_t seed, std::size_t triples, double eps, double tolerance) {
    CheckResult res{"latent gradient vs central differences (" + std::to_string(triples) + " triples)", 0.0,
                    tolerance, false, ""};
    std::size_t rejected = 0;
    std::string worst;
    for (std::size_t t = 0; t < triples; ++t) {
        RandomStream rng(derive_seed(seed, {kTripleTag, t}));
        const GeneratorNet net = make_random_toy_generator(rng.next_u64());
        Tensor target(net.image_shape().hwc());
        for (double& v : target.values()) v = rng.uniform_pm1();
        // Central differences only estimate the gradient where the stencil stays on
        // one side of every ReLU kink; redraw z until it does.
        for (;;) {
            LatentVector z(net.input_dim());
            for (double& v : z.values()) v = rng.uniform_pm1();
            const auto base = probe(net, z.storage()).pattern;
            bool smooth = true;
            auto f = [&](std::span<const double> v) {
                Probe p = probe(net, v);
                if (p.pattern != base) smooth = false;
                return loss_mse(target, p.image);
            };
            const auto numeric = finite_diff_grad(f, z.values(), eps);
            if (!smooth) {
                ++rejected;
                continue;
            }
            const double e = max_relative_error(gen_backward_z(net, z, target), numeric);
            if (e > res.max_rel_err) {
                res.max_rel_err = e;
                worst = "worst triple " + std::to_string(t);
            }
            break;
        }
    }
    res.passed = res.max_rel_err <= tolerance;
    res.detail = worst + (worst.empty() ? "" : ", ") + std::to_string(rejected) + " latent draws redrawn (kink in stencil)";
    return res;
}

bool SelfcheckReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string SelfcheckReport::text() const {
    std::string out;
    char line[256];
    for (const auto& c : checks) {
        std::snprintf(line, sizeof line, "%-4s %-56s max_rel_err=%.3e tol=%.0e", c.passed ? "ok" : "FAIL",
                      c.name.c_str(), c.max_rel_err, c.tolerance);
        out += line;
        if (!c.detail.empty()) out += "  " + c.detail;
        out += "\n";
    }
    out += passed() ? "selfcheck passed\n" : "selfcheck FAILED\n";
    return out;
}

SelfcheckReport run_selfcheck(const SelfcheckOptions& opt, const std::function<void(const CheckResult&)>& progress) {
    SelfcheckReport report;
    auto add = [&](CheckResult r) {
        if (progress) progress(r);
        report.checks.push_back(std::move(r));
    };
    RandomStream rng(derive_seed(opt.seed, {kLayerTag}));

    add(check_layer(layers::Dense{random_tensor({4, 5}, rng), random_tensor({4}, rng)}, {5}, 3, Mode::inference, rng,
                    opt));
    add(check_layer(layers::Reshape{{6}}, {2, 3}, 2, Mode::inference, rng, opt));
    {
        layers::BatchNorm bn{random_tensor({3}, rng), random_tensor({3}, rng), random_tensor({3}, rng, 0.3),
                             Tensor({3}, 1.0)};
        for (double& v : bn.running_var.values()) v = rng.uniform(0.5, 2.0);
        add(check_layer(bn, {3, 2, 2}, 4, Mode::inference, rng, opt));
        add(check_layer(bn, {3, 2, 2}, 4, Mode::training, rng, opt));
    }
    add(check_layer(layers::Relu{}, {7}, 3, Mode::inference, rng, opt));
    add(check_layer(layers::LeakyRelu{0.2}, {7}, 3, Mode::inference, rng, opt));
    add(check_layer(layers::ConvTranspose2d{random_tensor({2, 3, 4, 4}, rng), random_tensor({3}, rng), 2, 1}, {2, 3, 3},
                    2, Mode::inference, rng, opt));
    add(check_layer(layers::Conv2d{random_tensor({3, 2, 4, 4}, rng), random_tensor({3}, rng), 2, 1}, {2, 6, 6}, 2,
                    Mode::inference, rng, opt));
    add(check_layer(layers::Tanh{}, {7}, 3, Mode::inference, rng, opt));
    add(check_conv_transpose(rng, opt));
    add(check_latent_gradients(opt.seed, opt.triples, opt.fd_eps, opt.tolerance));
    add(check_gen_params(rng, opt));
    add(check_disc_loss(rng, opt));
    add(check_identity_recovery());
    return report;
}

}  // namespace ganproj
