#include "ganproj/corruption.hpp"

#include <cmath>

#include "ganproj/error.hpp"

namespace ganproj {

void NoiseModel::validate() const {
    if (!(sigma >= 0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be a finite value >= 0");
}

Tensor add_gaussian_noise(const Tensor& clean, double sigma, RandomStream& rng) {
    if (!(sigma >= 0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be a finite value >= 0");
    Tensor out = clean;
    if (sigma == 0) return out;
    const double scale = sigma / 127.5;
    for (double& v : out.values()) v += scale * rng.normal();
    return out;
}

NoisyImage add_gaussian_noise(const Image& img, const NoiseModel& model, std::uint64_t image_id) {
    model.validate();
    RandomStream rng(derive_seed(model.seed, {image_id}));
    Tensor target = add_gaussian_noise(normalize(img), model.sigma, rng);
    Image preview = denormalize(target);
    return {std::move(target), std::move(preview)};
}

}  // namespace ganproj
