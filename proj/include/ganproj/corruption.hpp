#pragma once

#include <cstdint>

#include "ganproj/rng.hpp"
#include "ganproj/tensor.hpp"
#include "ganproj/weights_io.hpp"

namespace ganproj {

/// sigma is a standard deviation in 8-bit pixel units.
struct NoiseModel {
    double sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct NoisyImage {
    /// normalize(img) + noise, unclamped.
    Tensor target;
    /// denormalize(target), clamped; for viewing only.
    Image preview;
};

/// Noise for image `image_id` comes from RandomStream(derive_seed(seed, {image_id})),
/// one Box-Muller normal per element in tensor order, scaled by sigma / 127.5.
NoisyImage add_gaussian_noise(const Image& img, const NoiseModel& model, std::uint64_t image_id = 0);

/// clean + sigma / 127.5 * N(0, 1) drawn from rng in element order.
Tensor add_gaussian_noise(const Tensor& clean, double sigma, RandomStream& rng);

}  // namespace ganproj
