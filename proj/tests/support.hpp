#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/pretrain.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/scorer.hpp"

namespace spo::test {

inline DenoiserArch tiny_arch(int width = 8, int depth = 2) {
    DenoiserArch a;
    a.cond_dim = 4;
    a.time_dim = 8;
    a.hidden = width;
    a.depth = depth;
    return a;
}

// Random weights everywhere, output layer included, so gradients are non-trivial.
inline DenoiserParams random_denoiser(const DenoiserArch& arch, std::uint64_t seed, double scale = 0.5) {
    RngStream rng(seed);
    DenoiserParams p = DenoiserParams::initialized(arch, rng, false);
    for (auto& w : p.weights()) w += scale * 0.1 * rng.normal();
    return p;
}

inline ScorerArch tiny_scorer_arch(bool time_conditioned = true) {
    ScorerArch a;
    a.embed_dim = 4;
    a.time_dim = 8;
    a.hidden = 8;
    a.depth = 2;
    a.time_conditioned = time_conditioned;
    return a;
}

inline ScorerParams random_scorer(const ScorerArch& arch, std::uint64_t seed, double tau = 1.0) {
    RngStream rng(seed);
    ScorerParams p = ScorerParams::initialized(arch, rng, tau);
    for (auto& w : p.weights()) w += 0.2 * rng.normal();
    return p;
}

// Max over coordinates of |g - fd| / max(|g|, |fd|, floor), central differences.
inline double fd_relative_error(std::span<double> params, const std::function<double()>& f,
                                std::span<const double> grad, double h = 1e-4, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = f();
        params[i] = saved - h;
        const double down = f();
        params[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), floor});
        worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
    return worst;
}

// A small base model trained long enough to be clearly conditional.
// Cached per process.
inline const DenoiserParams& quick_base() {
    static const DenoiserParams base = [] {
        PretrainConfig pc;
        pc.arch.hidden = 64;
        pc.steps = 1500;
        pc.batch = 64;
        pc.heldout = 256;
        RngStream rng(11);
        return pretrain_denoiser(SyntheticDataSpec{}, NoiseSchedule::linear(), pc, rng).params;
    }();
    return base;
}

// The default pretraining configuration (about half a minute).
inline const DenoiserParams& default_base() {
    static const DenoiserParams base = [] {
        RngStream rng(1);
        return pretrain_denoiser(SyntheticDataSpec{}, NoiseSchedule::linear(), PretrainConfig{}, rng).params;
    }();
    return base;
}

inline std::shared_ptr<const DenoiserParams> quick_base_ptr() {
    static const auto p = std::make_shared<const DenoiserParams>(quick_base());
    return p;
}

}  // namespace spo::test
