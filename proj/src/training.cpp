#include "ganproj/training.hpp"

#include <cmath>
#include <cstdio>

#include "ganproj/error.hpp"

namespace ganproj {

namespace {

constexpr std::uint64_t kDataTag = 0x64617461;   // "data"
constexpr std::uint64_t kTrainTag = 0x747261696e;  // "train"

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor as_batch(const DiscriminatorNet& net, const Tensor& img) {
    const Shape hwc = net.image_shape().hwc();
    if (img.shape() == hwc) return img.reshaped({1, hwc[0], hwc[1], hwc[2]});
    if (img.rank() == 4 && std::equal(hwc.begin(), hwc.end(), img.shape().begin() + 1)) return img;
    throw ShapeError("discriminator expects " + to_string(net.image_shape()) + " images, got " +
                     shape_to_string(img.shape()));
}

Tensor concat_batches(const Tensor& a, const Tensor& b) {
    Shape s = a.shape();
    s[0] += b.dim(0);
    std::vector<double> data;
    data.reserve(a.size() + b.size());
    data.insert(data.end(), a.storage().begin(), a.storage().end());
    data.insert(data.end(), b.storage().begin(), b.storage().end());
    return Tensor(std::move(s), std::move(data));
}

}  // namespace

// ---- toy corpus ------------------------------------------------------------------

void ToyDatasetSpec::validate() const {
    if (count == 0) throw ConfigError("dataset count must be at least 1");
    if (size == 0) throw ConfigError("dataset image size must be positive");
    if (supersample < 1) throw ConfigError("supersample must be at least 1");
    if (center_min > center_max || radius_min > radius_max || intensity_min > intensity_max) {
        throw ConfigError("dataset ranges must have min <= max");
    }
    if (radius_min <= 0) throw ConfigError("disc radius must be positive");
    if (intensity_min < 0 || intensity_max > 1) throw ConfigError("disc intensity must lie in [0, 1]");
}

std::vector<Image> make_toy_dataset(const ToyDatasetSpec& spec) {
    spec.validate();
    std::vector<Image> out;
    out.reserve(spec.count);
    const int ss = spec.supersample;
    const double inv_samples = 1.0 / (ss * ss);
    for (std::size_t i = 0; i < spec.count; ++i) {
        RandomStream rng(derive_seed(spec.seed, {kDataTag, i}));
        const double cx = rng.uniform(spec.center_min, spec.center_max);
        const double cy = rng.uniform(spec.center_min, spec.center_max);
        const double r = rng.uniform(spec.radius_min, spec.radius_max);
        const double intensity = rng.uniform(spec.intensity_min, spec.intensity_max);
        Image img(spec.size, spec.size, 1);
        for (std::size_t y = 0; y < spec.size; ++y) {
            for (std::size_t x = 0; x < spec.size; ++x) {
                int inside = 0;
                for (int sy = 0; sy < ss; ++sy) {
                    for (int sx = 0; sx < ss; ++sx) {
                        const double px = static_cast<double>(x) + (sx + 0.5) / ss - cx;
                        const double py = static_cast<double>(y) + (sy + 0.5) / ss - cy;
                        inside += px * px + py * py <= r * r;
                    }
                }
                const double v = intensity * inside * inv_samples * 255.0;
                img.at(y, x) = static_cast<std::uint8_t>(std::min(255.0, std::floor(v + 0.5)));
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

// ---- Adam ----------------------------------------------------------------------------

void adam_update(const std::vector<Tensor*>& params, const ParamGrads& grads, AdamState& state,
                 const AdamConfig& cfg) {
    if (grads.grads.size() != params.size()) throw ShapeError("Adam: gradient count does not match parameters");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads.grads[k];
        require_same_shape(p, g, "adam_update");
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

// ---- discriminator ---------------------------------------------------------------------

std::vector<double> disc_forward(const DiscriminatorNet& net, const Tensor& img) {
    const Tensor logits = net.body().forward(hwc_to_chw(as_batch(net, img)), Mode::inference);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) throw NumericError("discriminator produced a non-finite logit");
        out[i] = sigmoid(logits[i]);
    }
    return out;
}

double disc_loss_and_grads(const DiscriminatorNet& net, const Tensor& real, const Tensor& fake, ParamGrads* grads) {
    const Tensor r = as_batch(net, real);
    const Tensor f = as_batch(net, fake);
    const std::size_t nr = r.dim(0), nf = f.dim(0);
    // No batch-norm in D, so one pass over the concatenated batch is equivalent.
    ForwardTrace trace;
    const Tensor logits = net.body().forward(hwc_to_chw(concat_batches(r, f)), Mode::training, &trace);
    Tensor dl(logits.shape());
    double loss_real = 0.0, loss_fake = 0.0;
    for (std::size_t i = 0; i < nr; ++i) {
        loss_real += softplus(-logits[i]);
        dl[i] = (sigmoid(logits[i]) - 1.0) / static_cast<double>(nr);
    }
    for (std::size_t i = nr; i < nr + nf; ++i) {
        loss_fake += softplus(logits[i]);
        dl[i] = sigmoid(logits[i]) / static_cast<double>(nf);
    }
    if (grads) net.body().backward(trace, dl, Mode::training, grads, false);
    return loss_real / static_cast<double>(nr) + loss_fake / static_cast<double>(nf);
}

// ---- training --------------------------------------------------------------------------

StepLosses gan_train_step(GanState& state, const Tensor& real_batch, const AdamConfig& adam, RandomStream& rng) {
    GeneratorNet& gen = state.gen;
    DiscriminatorNet& disc = state.disc;
    const std::size_t n = real_batch.dim(0);
    if (n < 2) throw ConfigError("batch size must be at least 2 for batch statistics");
    const std::size_t d = gen.input_dim();

    Tensor z({n, d});
    for (double& v : z.values()) v = rng.uniform_pm1();
    ForwardTrace gtrace;
    const Tensor fake = gen_forward_batch(gen, z, Mode::training, &gtrace);

    StepLosses losses;
    ParamGrads dgrads = disc.body().zero_grads();
    losses.loss_d = disc_loss_and_grads(disc, real_batch, fake, &dgrads);
    if (!std::isfinite(losses.loss_d)) throw NumericError("discriminator loss is not finite");
    adam_update(disc.body().parameters(), dgrads, state.adam_d, adam);

    // Non-saturating generator loss: mean softplus(-D_logit(G(z))) against the updated D.
    ForwardTrace dtrace;
    const Tensor logits = disc.body().forward(hwc_to_chw(fake), Mode::training, &dtrace);
    Tensor dl(logits.shape());
    double loss_g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss_g += softplus(-logits[i]);
        dl[i] = (sigmoid(logits[i]) - 1.0) / static_cast<double>(n);
    }
    losses.loss_g = loss_g / static_cast<double>(n);
    if (!std::isfinite(losses.loss_g)) throw NumericError("generator loss is not finite");
    const Tensor dfake_chw = disc.body().backward(dtrace, dl, Mode::training, nullptr, true);

    ParamGrads ggrads = gen.body().zero_grads();
    const Tensor dfake = gen.channel_major() ? dfake_chw : chw_to_hwc(dfake_chw).reshaped(gtrace.activations.back().shape());
    gen.body().backward(gtrace, dfake, Mode::training, &ggrads, false);
    adam_update(gen.body().parameters(), ggrads, state.adam_g, adam);
    gen.body().commit_batch_stats(gtrace);
    return losses;
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch-norm needs batch statistics)");
    if (!(adam.lr >= 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
        !(adam.eps > 0)) {
        throw ConfigError("Adam hyperparameters out of range (lr >= 0, 0 <= beta < 1, eps > 0)");
    }
    if (profile.latent_dim == 0 || (profile.channels != 1 && profile.channels != 3)) {
        throw ConfigError("generator profile needs latent_dim >= 1 and 1 or 3 channels");
    }
    if (disc_width == 0) throw ConfigError("disc_width must be positive");
    if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("checkpoint_every needs a checkpoint directory");
}

TrainResult train(const std::vector<Image>& dataset, const TrainConfig& config, const TrainProgress& progress) {
    config.validate();
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    const ImageShape shape = dataset.front().shape();
    if (shape != ImageShape{32, 32, config.profile.channels}) {
        throw ShapeError("training images must be " + to_string(ImageShape{32, 32, config.profile.channels}) +
                         ", got " + to_string(shape));
    }
    std::vector<double> corpus;
    corpus.reserve(dataset.size() * shape.numel());
    for (const Image& img : dataset) {
        if (img.shape() != shape) throw ShapeError("training images must all have the same shape");
        const Tensor t = normalize(img);
        corpus.insert(corpus.end(), t.storage().begin(), t.storage().end());
    }

    GanState state{make_dcgan_generator(config.profile, config.seed),
                   make_dcgan_discriminator(config.profile.channels, config.seed, config.disc_width),
                   {},
                   {}};
    state.gen.set_mode(Mode::training);
    RandomStream rng(derive_seed(config.seed, {kTrainTag}));
    std::vector<LossRecord> history;
    history.reserve(config.steps);
    const std::size_t numel = shape.numel();
    const std::size_t n = config.batch_size;

    for (std::size_t step = 1; step <= config.steps; ++step) {
        Tensor batch({n, shape.height, shape.width, shape.channels});
        for (std::size_t b = 0; b < n; ++b) {
            const auto idx = std::min(dataset.size() - 1,
                                      static_cast<std::size_t>(rng.uniform01() * static_cast<double>(dataset.size())));
            std::copy_n(corpus.begin() + static_cast<long>(idx * numel), numel, batch.data() + b * numel);
        }
        StepLosses l;
        try {
            l = gan_train_step(state, batch, config.adam, rng);
        } catch (const NumericError& e) {
            throw NumericError("training step " + std::to_string(step) + ": " + e.what());
        }
        history.push_back({step, l.loss_d, l.loss_g});
        if (progress) progress(history.back());
        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06zu.gpdw", step);
            std::filesystem::create_directories(config.checkpoint_dir);
            save_checkpoint(state.gen, state.disc, config.checkpoint_dir / name);
        }
    }
    state.gen.set_mode(Mode::inference);
    return {std::move(state.gen), std::move(state.disc), std::move(history)};
}

std::string loss_csv(const std::vector<LossRecord>& history) {
    std::string out = "step,loss_d,loss_g\n";
    char line[96];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", r.step, r.loss_d, r.loss_g);
        out += line;
    }
    return out;
}

}  // namespace ganproj
