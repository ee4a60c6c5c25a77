#pragma once

#include <functional>
#include <span>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/synthetic.hpp"

namespace spo {

struct PretrainConfig {
    DenoiserArch arch;
    long steps = 6000;
    int batch = 128;
    double lr = 2e-3;
    double final_lr = 1e-4;   // cosine decay target
    double cond_dropout = 0.1;
    int heldout = 2048;

    friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

// One eps-regression example: x_t = forward_diffuse(x0, t, noise).
struct NoiseExample {
    Sample x_t;
    int t = 0;
    Condition c;
    Sample noise;
};

std::vector<NoiseExample> make_noise_batch(const SyntheticDataSpec& spec, const NoiseSchedule& sched,
                                           std::size_t n, double cond_dropout, RngStream& rng);

// Mean over examples and coordinates of (eps_hat - noise)^2. When grad is
// non-empty the gradient of that mean is accumulated into it.
double noise_mse(const DenoiserParams& params, std::span<const NoiseExample> batch, std::span<double> grad = {});

struct PretrainResult {
    DenoiserParams params;
    double initial_mse = 0.0;  // held-out, before training
    double final_mse = 0.0;    // held-out, after training
    std::vector<double> loss_curve;  // training loss per step
};

using PretrainProgress = std::function<void(long step, double loss)>;

// Adam on the eps-MSE with condition dropout. Throws TrainingError when the
// loss becomes non-finite.
PretrainResult pretrain_denoiser(const SyntheticDataSpec& data, const NoiseSchedule& sched,
                                 const PretrainConfig& config, RngStream& rng,
                                 const PretrainProgress& progress = {});

}  // namespace spo
