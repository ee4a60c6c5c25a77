#pragma once

#include <span>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/types.hpp"

namespace spo {

// Reverse-process density N(mean, std^2 I).
struct GaussianTransition {
    Sample mean;
    double std = 0.0;
};

// Lower bound applied to transition std wherever a log-density is needed
// during training (the final DDIM step into t = 0 has zero variance).
inline constexpr double kMinTransitionStd = 1e-6;

// sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) noise. Throws
// std::out_of_range when t is outside [0, T_max].
Sample forward_diffuse(std::span<const double> x0, int t, std::span<const double> noise,
                       const NoiseSchedule& sched);

// (x_t - sqrt(1 - ab) eps) / sqrt(ab), with eps the unguided c-conditioned
// prediction. At t = 0 the input is returned unchanged.
Sample estimate_x0(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                   const NoiseSchedule& sched);
Sample x0_from_noise(std::span<const double> x_t, std::span<const double> eps, int t,
                     const NoiseSchedule& sched);

// The DDIM update written as mean = x_coef * x_t + eps_coef * eps.
struct TransitionCoeffs {
    double x_coef = 0.0;
    double eps_coef = 0.0;
    double std = 0.0;
};

// sigma = eta sqrt((1-ab_to)/(1-ab_from)) sqrt(1 - ab_from/ab_to),
// mean = sqrt(ab_to) x0_hat + sqrt(1 - ab_to - sigma^2) eps.
TransitionCoeffs transition_coeffs(const NoiseSchedule& sched, int t_from, int t_to, double eta);

GaussianTransition ddim_transition(const DenoiserParams& params, std::span<const double> x_t, int t_from,
                                   int t_to, Condition c, double scale, double eta,
                                   const NoiseSchedule& sched);

// Transition from a precomputed noise estimate.
GaussianTransition transition_from_noise(std::span<const double> x_t, std::span<const double> eps,
                                         const TransitionCoeffs& k);

Sample sample_step(const GaussianTransition& trans, RngStream& rng);

// Isotropic Gaussian log-density. Throws NumericError when std == 0.
double log_prob(const GaussianTransition& trans, std::span<const double> x);

// Full trajectory x_T ... x_0 (steps + 1 samples), x_T ~ N(0, I).
std::vector<Sample> rollout(const DenoiserParams& params, Condition c, const SamplerGrid& grid, double scale,
                            const NoiseSchedule& sched, RngStream& rng);

// Continues a trajectory from x at grid index `from` down to grid index `to`.
std::vector<Sample> rollout_from(const DenoiserParams& params, Sample x, std::size_t from, std::size_t to,
                                 Condition c, const SamplerGrid& grid, double scale,
                                 const NoiseSchedule& sched, RngStream& rng);

}  // namespace spo
