#include "spo/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "spo/diffusion.hpp"
#include "spo/errors.hpp"
#include "spo/optim.hpp"

namespace spo {

std::vector<NoiseExample> make_noise_batch(const SyntheticDataSpec& spec, const NoiseSchedule& sched,
                                           std::size_t n, double cond_dropout, RngStream& rng) {
    std::vector<NoiseExample> batch(n);
    for (auto& ex : batch) {
        const LabeledSample s = draw_training_sample(spec, rng);
        ex.t = rng.integer(1, sched.t_max());
        ex.noise = rng.normal_vector(s.x0.size());
        ex.x_t = forward_diffuse(s.x0, ex.t, ex.noise, sched);
        ex.c = rng.uniform() < cond_dropout ? Condition::unconditional() : s.label;
    }
    return batch;
}

double noise_mse(const DenoiserParams& params, std::span<const NoiseExample> batch, std::span<double> grad) {
    const double d = static_cast<double>(params.arch().data_dim);
    const double norm = 1.0 / (d * static_cast<double>(batch.size()));
    double total = 0.0;
    DenoiserTrace trace;
    std::vector<double> d_eps(static_cast<std::size_t>(params.arch().data_dim));
    for (const auto& ex : batch) {
        const Sample eps = predict_noise(params, ex.x_t, ex.t, ex.c, trace);
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double r = eps[i] - ex.noise[i];
            total += r * r;
            d_eps[i] = 2.0 * r * norm;
        }
        if (!grad.empty()) backprop_noise(params, trace, d_eps, grad);
    }
    return total * norm;
}

PretrainResult pretrain_denoiser(const SyntheticDataSpec& data, const NoiseSchedule& sched,
                                 const PretrainConfig& config, RngStream& rng, const PretrainProgress& progress) {
    RngStream init_rng = rng.derive(0);
    RngStream heldout_rng = rng.derive(1);
    RngStream batch_rng = rng.derive(2);

    PretrainResult result;
    result.params = DenoiserParams::initialized(config.arch, init_rng);
    const auto heldout =
        make_noise_batch(data, sched, static_cast<std::size_t>(config.heldout), config.cond_dropout, heldout_rng);
    result.initial_mse = noise_mse(result.params, heldout);

    Adam adam(result.params.size(), config.lr);
    std::vector<double> grad(result.params.size());
    result.loss_curve.reserve(static_cast<std::size_t>(config.steps));
    for (long step = 0; step < config.steps; ++step) {
        const double frac = config.steps > 1 ? static_cast<double>(step) / static_cast<double>(config.steps - 1) : 0.0;
        adam.set_lr(config.final_lr + 0.5 * (config.lr - config.final_lr) * (1.0 + std::cos(std::numbers::pi * frac)));
        const auto batch =
            make_noise_batch(data, sched, static_cast<std::size_t>(config.batch), config.cond_dropout, batch_rng);
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        try {
            loss = noise_mse(result.params, batch, grad);
        } catch (const NumericError& e) {
            throw TrainingError(std::string("pretraining diverged: ") + e.what(), step);
        }
        if (!std::isfinite(loss) || !all_finite(grad)) throw TrainingError("pretraining loss is not finite", step);
        if (config.lr > 0.0) adam.step(result.params.weights(), grad);
        result.loss_curve.push_back(loss);
        if (progress) progress(step, loss);
    }
    result.final_mse = noise_mse(result.params, heldout);
    return result;
}

}  // namespace spo
