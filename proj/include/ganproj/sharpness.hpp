#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganproj/netcore.hpp"
#include "ganproj/recovery.hpp"

namespace ganproj {

/// Latent correction for one noise level: mean(true z) - mean(recovered z').
struct SharpnessAttribute {
    double sigma = 0.0;
    std::vector<double> vector;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

struct SharpnessOptions {
    /// True latents are drawn uniform in [-latent_scale, latent_scale]^d.
    double latent_scale = 1.0;
    unsigned jobs = 0;
};

/// For each sigma_k: z_i from stream (seed, "latent", i), shared by every level;
/// target_i = phi(z_i) + noise from stream (seed, k, i); z'_i recovered with
/// config (its seed replaced by a per-level derived seed). Samples depend only on
/// their index, so estimates at n and 2n share the first n samples.
std::vector<SharpnessAttribute> estimate_sharpness(const GeneratorNet& net, const std::vector<double>& sigmas,
                                                   std::size_t n, const RecoveryConfig& config, std::uint64_t seed,
                                                   const SharpnessOptions& options = {});

/// z_hat + attr.vector, clamped to [-1, 1].
LatentVector apply_sharpness(const LatentVector& z_hat, const SharpnessAttribute& attr);

/// recover, then denormalize(phi(apply_sharpness(z_hat, attr))).
Denoised denoise_sa(const GeneratorNet& net, const Image& noisy, const SharpnessAttribute& attr,
                    const RecoveryConfig& config, std::uint64_t image_id = 0);
Denoised denoise_sa(const GeneratorNet& net, const Tensor& noisy, const SharpnessAttribute& attr,
                    const RecoveryConfig& config, std::uint64_t image_id = 0);

/// {"sigma": s, "n": n, "seed": seed, "vector": [...]}
nlohmann::json sharpness_to_json(const SharpnessAttribute& attr);
SharpnessAttribute sharpness_from_json(const nlohmann::json& doc);
void save_sharpness(const SharpnessAttribute& attr, const std::filesystem::path& path);
SharpnessAttribute load_sharpness(const std::filesystem::path& path);

}  // namespace ganproj
