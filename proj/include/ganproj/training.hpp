#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ganproj/netcore.hpp"
#include "ganproj/rng.hpp"
#include "ganproj/weights_io.hpp"

namespace ganproj {

/// Procedural corpus of anti-aliased bright discs on a black 32x32x1 canvas.
struct ToyDatasetSpec {
    std::size_t count = 1000;
    std::uint64_t seed = 1;
    std::size_t size = 32;
    double center_min = 8.0;
    double center_max = 24.0;
    double radius_min = 4.0;
    double radius_max = 10.0;
    double intensity_min = 0.5;
    double intensity_max = 1.0;
    /// Samples per pixel side.
    int supersample = 2;

    void validate() const;
};

/// Image i depends only on (spec, i).
std::vector<Image> make_toy_dataset(const ToyDatasetSpec& spec);

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update of params in place.
void adam_update(const std::vector<Tensor*>& params, const ParamGrads& grads, AdamState& state,
                 const AdamConfig& cfg);

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t steps = 2000;
    AdamConfig adam;
    std::uint64_t seed = 1;
    GeneratorProfile profile = GeneratorProfile::toy();
    /// Base channel width of the discriminator (w, 2w, 4w).
    std::size_t disc_width = 32;
    /// Write a checkpoint every this many steps; 0 disables.
    std::size_t checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;

    void validate() const;
};

/// D(x) = sigmoid(logit). img is H x W x C or a batch {N, H, W, C}; one value per image.
std::vector<double> disc_forward(const DiscriminatorNet& net, const Tensor& img);

/// Discriminator loss mean(softplus(-l_real)) + mean(softplus(l_fake)) and its
/// parameter gradients, for image batches in {N, H, W, C} layout.
double disc_loss_and_grads(const DiscriminatorNet& net, const Tensor& real, const Tensor& fake, ParamGrads* grads);

struct StepLosses {
    double loss_d = 0.0;
    double loss_g = 0.0;
};

struct GanState {
    GeneratorNet gen;
    DiscriminatorNet disc;
    AdamState adam_g;
    AdamState adam_d;
};

/// One discriminator update followed by one non-saturating generator update.
/// real_batch is {N, H, W, C} in [-1, 1]. Latents for the fake batch come from rng.
StepLosses gan_train_step(GanState& state, const Tensor& real_batch, const AdamConfig& adam, RandomStream& rng);

struct LossRecord {
    std::size_t step = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
};

struct TrainResult {
    GeneratorNet gen;
    DiscriminatorNet disc;
    std::vector<LossRecord> history;
};

/// Called after every step with the step's losses.
using TrainProgress = std::function<void(const LossRecord&)>;

/// Generator comes back in inference mode.
TrainResult train(const std::vector<Image>& dataset, const TrainConfig& config, const TrainProgress& progress = {});

std::string loss_csv(const std::vector<LossRecord>& history);

}  // namespace ganproj
