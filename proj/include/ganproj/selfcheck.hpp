#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ganproj/netcore.hpp"

namespace ganproj {

struct SelfcheckOptions {
    std::uint64_t seed = 1;
    /// Random (toy net, z, target) triples for the latent-gradient check.
    std::size_t triples = 200;
    double tolerance = 1e-5;
    double fd_eps = 1e-4;
    /// Layer kind whose analytic backward is deliberately corrupted ("" = none).
    std::string inject_fault;
};

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string detail;
};

struct SelfcheckReport {
    std::vector<CheckResult> checks;

    bool passed() const;
    /// One line per check; deterministic for a fixed seed.
    std::string text() const;
};

/// ||a - b||_inf / max(||a||_inf, ||b||_inf), or 0 when both vanish.
double max_relative_error(std::span<const double> a, std::span<const double> b);

/// Toy-profile generator with random weights and batch-norm running statistics
/// calibrated on a random latent batch, so every layer is in a generic regime.
GeneratorNet make_random_toy_generator(std::uint64_t seed, std::size_t latent_dim = 16);

/// Max relative error between gen_backward_z and central differences over
/// `triples` random (toy net, z, target) cases.
CheckResult check_latent_gradients(std::uint64_t seed, std::size_t triples, double eps = 1e-4,
                                   double tolerance = 1e-5);

/// Runs every check; `progress` sees each result as it completes.
SelfcheckReport run_selfcheck(const SelfcheckOptions& options,
                              const std::function<void(const CheckResult&)>& progress = {});

}  // namespace ganproj
