#include "ganproj/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ganproj/error.hpp"
#include "ganproj/parallel.hpp"

namespace ganproj {

std::string to_string(ClipStrategy s) {
    switch (s) {
        case ClipStrategy::none: return "none";
        case ClipStrategy::projected: return "projected";
        case ClipStrategy::stochastic: return "stochastic";
    }
    return "?";
}

ClipStrategy parse_strategy(const std::string& name) {
    if (name == "none") return ClipStrategy::none;
    if (name == "projected") return ClipStrategy::projected;
    if (name == "stochastic") return ClipStrategy::stochastic;
    throw ConfigError("unknown strategy '" + name + "' (expected none, projected or stochastic)");
}

void RecoveryConfig::validate() const {
    if (!(step_size > 0) || !std::isfinite(step_size)) throw ConfigError("step_size must be positive");
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    if (restarts < 1) throw ConfigError("restarts must be at least 1");
    if (!(tol >= 0)) throw ConfigError("tol must be nonnegative");
}

LatentVector clip_projected(const LatentVector& z) {
    LatentVector out = z;
    for (double& v : out.values()) v = std::min(1.0, std::max(-1.0, v));
    return out;
}

LatentVector clip_stochastic(const LatentVector& z, RandomStream& rng, std::vector<bool>* resampled) {
    LatentVector out = z;
    if (resampled) resampled->assign(z.dim(), false);
    for (std::size_t i = 0; i < out.dim(); ++i) {
        // NaN compares false and is left for the loss check to report.
        if (std::abs(out[i]) > 1.0) {
            out[i] = rng.uniform_pm1();
            if (resampled) (*resampled)[i] = true;
        }
    }
    return out;
}

namespace {

struct RestartOutcome {
    LatentVector z;
    double loss = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
};

RestartOutcome run_restart(const GeneratorNet& net, const Tensor& target, const RecoveryConfig& cfg,
                           std::uint64_t image_id, std::size_t restart, const RecoveryObserver& observer) {
    RandomStream rng(derive_seed(cfg.seed, {image_id, restart}));
    LatentVector z(net.input_dim());
    for (double& v : z.values()) v = rng.uniform_pm1();

    RestartOutcome out;
    std::vector<double> best_hist;
    std::vector<bool> resampled;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        LossAndGrad lg = gen_loss_and_grad_z(net, z, target);
        if (!std::isfinite(lg.loss)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(it) + " of restart " +
                               std::to_string(restart));
        }
        out.trace.push_back(lg.loss);
        if (lg.loss < out.loss) {
            out.loss = lg.loss;
            out.z = z;
        }
        best_hist.push_back(out.loss);
        if (lg.loss < cfg.tol) break;
        if (it >= cfg.stall_window && cfg.stall_window > 0) {
            const double before = best_hist[it - cfg.stall_window];
            if (before - out.loss <= cfg.tol * before) break;
        }
        for (std::size_t i = 0; i < z.dim(); ++i) z[i] -= cfg.step_size * lg.grad[i];
        switch (cfg.strategy) {
            case ClipStrategy::none: break;
            case ClipStrategy::projected: z = clip_projected(z); break;
            case ClipStrategy::stochastic: z = clip_stochastic(z, rng, observer ? &resampled : nullptr); break;
        }
        if (observer) {
            observer({restart, it, lg.loss, &z, cfg.strategy == ClipStrategy::stochastic ? &resampled : nullptr});
        }
    }
    return out;
}

}  // namespace

RecoveryResult recover(const GeneratorNet& net, const Tensor& target, const RecoveryConfig& config,
                       std::uint64_t image_id, const RecoveryObserver& observer) {
    config.validate();
    if (target.shape() != net.image_shape().hwc()) {
        throw ShapeError("target shape " + shape_to_string(target.shape()) + " does not match generator image " +
                         to_string(net.image_shape()));
    }
    RecoveryResult best;
    best.final_loss = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < config.restarts; ++r) {
        RestartOutcome o = run_restart(net, target, config, image_id, r, observer);
        const double loss = loss_mse(target, gen_forward(net, o.z));
        if (r == 0 || loss < best.final_loss) {
            best.z_hat = std::move(o.z);
            best.final_loss = loss;
            best.iterations_used = o.trace.size();
            best.loss_trace = std::move(o.trace);
            best.restart_index = r;
        }
    }
    return best;
}

std::vector<RecoveryResult> recover_batch(const GeneratorNet& net, const std::vector<Tensor>& targets,
                                          const RecoveryConfig& config, unsigned jobs, std::uint64_t first_id) {
    config.validate();
    std::vector<RecoveryResult> out(targets.size());
    parallel_for(targets.size(), jobs, [&](std::size_t i) {
        try {
            out[i] = recover(net, targets[i], config, first_id + i);
        } catch (const NumericError& e) {
            throw NumericError("image " + std::to_string(first_id + i) + ": " + e.what());
        }
    });
    return out;
}

Denoised denoise(const GeneratorNet& net, const Tensor& noisy, const RecoveryConfig& config, std::uint64_t image_id) {
    RecoveryResult r = recover(net, noisy, config, image_id);
    Image img = denormalize(gen_forward(net, r.z_hat));
    return {std::move(img), std::move(r)};
}

Denoised denoise(const GeneratorNet& net, const Image& noisy, const RecoveryConfig& config, std::uint64_t image_id) {
    if (noisy.shape() != net.image_shape()) {
        throw ShapeError("image " + to_string(noisy.shape()) + " does not match generator output " +
                         to_string(net.image_shape()));
    }
    return denoise(net, normalize(noisy), config, image_id);
}

std::string trace_csv(const std::vector<RecoveryResult>& results, const std::vector<std::uint64_t>& image_ids) {
    if (image_ids.size() != results.size()) throw ShapeError("trace_csv: one image id per result required");
    std::string out = "image_id,restart,iter,loss\n";
    char line[96];
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& r = results[k];
        for (std::size_t it = 0; it < r.loss_trace.size(); ++it) {
            std::snprintf(line, sizeof line, "%llu,%zu,%zu,%.17g\n", static_cast<unsigned long long>(image_ids[k]),
                          r.restart_index, it, r.loss_trace[it]);
            out += line;
        }
    }
    return out;
}

}  // namespace ganproj
