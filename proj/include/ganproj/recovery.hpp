#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ganproj/netcore.hpp"
#include "ganproj/rng.hpp"
#include "ganproj/weights_io.hpp"

namespace ganproj {

enum class ClipStrategy { none, projected, stochastic };

std::string to_string(ClipStrategy s);
/// "none", "projected" or "stochastic"; anything else is a ConfigError.
ClipStrategy parse_strategy(const std::string& name);

struct RecoveryConfig {
    ClipStrategy strategy = ClipStrategy::stochastic;
    double step_size = 0.5;
    std::size_t max_iters = 5000;
    /// Stop once loss < tol, or once the best loss improved by a relative
    /// amount < tol over the last stall_window iterations.
    double tol = 1e-8;
    std::size_t stall_window = 100;
    std::size_t restarts = 3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RecoveryResult {
    LatentVector z_hat;
    /// loss_mse(target, gen_forward(net, z_hat)), recomputed.
    double final_loss = 0.0;
    std::size_t iterations_used = 0;
    /// Loss at every evaluated iterate of the winning restart.
    std::vector<double> loss_trace;
    std::size_t restart_index = 0;
};

/// min(1, max(-1, z_i)).
LatentVector clip_projected(const LatentVector& z);

/// Components with |z_i| > 1 are redrawn uniformly from (-1, 1), in index order.
/// When `resampled` is given it receives one flag per component.
LatentVector clip_stochastic(const LatentVector& z, RandomStream& rng, std::vector<bool>* resampled = nullptr);

/// Iterate after the step and clipping of iteration `iter` of restart `restart`.
struct IterationEvent {
    std::size_t restart = 0;
    std::size_t iter = 0;
    double loss = 0.0;
    const LatentVector* z = nullptr;
    const std::vector<bool>* resampled = nullptr;
};
using RecoveryObserver = std::function<void(const IterationEvent&)>;

/// Fixed-step gradient descent on loss_mse(target, phi(z)) with restarts.
/// Restart r starts uniform in [-1,1]^d from stream derive_seed(seed, {image_id, r})
/// and returns the best iterate it saw. The lowest final loss wins; ties go to
/// the lower restart index. The target is used as given (never clamped).
RecoveryResult recover(const GeneratorNet& net, const Tensor& target, const RecoveryConfig& config,
                       std::uint64_t image_id = 0, const RecoveryObserver& observer = {});

/// recover() on each target in parallel; result i uses image_id first_id + i.
std::vector<RecoveryResult> recover_batch(const GeneratorNet& net, const std::vector<Tensor>& targets,
                                          const RecoveryConfig& config, unsigned jobs = 0,
                                          std::uint64_t first_id = 0);

struct Denoised {
    Image image;
    RecoveryResult result;
};

/// denormalize(phi(z_hat)) for the recovered z_hat. Needs no noise level.
Denoised denoise(const GeneratorNet& net, const Image& noisy, const RecoveryConfig& config,
                 std::uint64_t image_id = 0);
/// Same, for an unclamped tensor-space target.
Denoised denoise(const GeneratorNet& net, const Tensor& noisy, const RecoveryConfig& config,
                 std::uint64_t image_id = 0);

/// CSV "image_id,restart,iter,loss" with one row per traced iterate.
std::string trace_csv(const std::vector<RecoveryResult>& results, const std::vector<std::uint64_t>& image_ids);

}  // namespace ganproj
