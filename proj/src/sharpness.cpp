#include "ganproj/sharpness.hpp"

#include <algorithm>
#include <cmath>

#include "ganproj/corruption.hpp"
#include "ganproj/error.hpp"
#include "ganproj/parallel.hpp"
#include "ganproj/weights_io.hpp"

namespace ganproj {

namespace {

constexpr std::uint64_t kLatentTag = 0x6c6174656e74;  // "latent"
constexpr std::uint64_t kNoiseTag = 0x6e6f697365;     // "noise"
constexpr std::uint64_t kRecoverTag = 0x7265636f766572;  // "recover"

}  // namespace

std::vector<SharpnessAttribute> estimate_sharpness(const GeneratorNet& net, const std::vector<double>& sigmas,
                                                   std::size_t n, const RecoveryConfig& config, std::uint64_t seed,
                                                   const SharpnessOptions& options) {
    if (n < 1) throw ConfigError("sharpness estimation needs n >= 1");
    if (!(options.latent_scale > 0 && options.latent_scale <= 1)) {
        throw ConfigError("latent_scale must lie in (0, 1]");
    }
    config.validate();
    const std::size_t d = net.input_dim();

    std::vector<LatentVector> truth(n);
    std::vector<Tensor> clean(n);
    parallel_for(n, options.jobs, [&](std::size_t i) {
        RandomStream rng(derive_seed(seed, {kLatentTag, i}));
        LatentVector z(d);
        for (double& v : z.values()) v = options.latent_scale * rng.uniform_pm1();
        clean[i] = gen_forward(net, z);
        truth[i] = std::move(z);
    });

    std::vector<double> mean_true(d, 0.0);
    for (const auto& z : truth)
        for (std::size_t j = 0; j < d; ++j) mean_true[j] += z[j];

    std::vector<SharpnessAttribute> out;
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
        RecoveryConfig cfg = config;
        cfg.seed = derive_seed(seed, {kRecoverTag, k});
        std::vector<LatentVector> recovered(n);
        parallel_for(n, options.jobs, [&](std::size_t i) {
            RandomStream rng(derive_seed(seed, {kNoiseTag, k, i}));
            const Tensor target = add_gaussian_noise(clean[i], sigmas[k], rng);
            try {
                recovered[i] = recover(net, target, cfg, i).z_hat;
            } catch (const NumericError& e) {
                throw NumericError("sharpness sample " + std::to_string(i) + " (sigma " + std::to_string(sigmas[k]) +
                                   "): " + e.what());
            }
        });
        std::vector<double> mean_rec(d, 0.0);
        for (const auto& z : recovered)
            for (std::size_t j = 0; j < d; ++j) mean_rec[j] += z[j];
        SharpnessAttribute attr{sigmas[k], std::vector<double>(d), n, seed};
        for (std::size_t j = 0; j < d; ++j) {
            attr.vector[j] = mean_true[j] / static_cast<double>(n) - mean_rec[j] / static_cast<double>(n);
        }
        out.push_back(std::move(attr));
    }
    return out;
}

LatentVector apply_sharpness(const LatentVector& z_hat, const SharpnessAttribute& attr) {
    if (attr.vector.size() != z_hat.dim()) {
        throw ShapeError("sharpness vector has dimension " + std::to_string(attr.vector.size()) +
                         ", latent has " + std::to_string(z_hat.dim()));
    }
    LatentVector out = z_hat;
    for (std::size_t i = 0; i < out.dim(); ++i) out[i] = std::clamp(out[i] + attr.vector[i], -1.0, 1.0);
    return out;
}

Denoised denoise_sa(const GeneratorNet& net, const Tensor& noisy, const SharpnessAttribute& attr,
                    const RecoveryConfig& config, std::uint64_t image_id) {
    if (attr.vector.size() != net.input_dim()) {
        throw ShapeError("sharpness vector has dimension " + std::to_string(attr.vector.size()) +
                         ", generator expects " + std::to_string(net.input_dim()));
    }
    RecoveryResult r = recover(net, noisy, config, image_id);
    Image img = denormalize(gen_forward(net, apply_sharpness(r.z_hat, attr)));
    return {std::move(img), std::move(r)};
}

Denoised denoise_sa(const GeneratorNet& net, const Image& noisy, const SharpnessAttribute& attr,
                    const RecoveryConfig& config, std::uint64_t image_id) {
    if (noisy.shape() != net.image_shape()) {
        throw ShapeError("image " + to_string(noisy.shape()) + " does not match generator output " +
                         to_string(net.image_shape()));
    }
    return denoise_sa(net, normalize(noisy), attr, config, image_id);
}

nlohmann::json sharpness_to_json(const SharpnessAttribute& attr) {
    return {{"sigma", attr.sigma}, {"n", attr.n_samples}, {"seed", attr.seed}, {"vector", attr.vector}};
}

SharpnessAttribute sharpness_from_json(const nlohmann::json& doc) {
    try {
        SharpnessAttribute a;
        a.sigma = doc.at("sigma").get<double>();
        a.n_samples = doc.at("n").get<std::size_t>();
        a.seed = doc.at("seed").get<std::uint64_t>();
        a.vector = doc.at("vector").get<std::vector<double>>();
        if (a.n_samples < 1) throw FormatError("sharpness attribute needs n >= 1");
        if (a.vector.empty()) throw FormatError("sharpness vector is empty");
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed sharpness attribute: ") + e.what());
    }
}

void save_sharpness(const SharpnessAttribute& attr, const std::filesystem::path& path) {
    write_text_atomic(path, sharpness_to_json(attr).dump(2) + "\n");
}

SharpnessAttribute load_sharpness(const std::filesystem::path& path) {
    try {
        return sharpness_from_json(read_json(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ganproj
