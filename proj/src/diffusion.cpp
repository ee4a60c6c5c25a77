#include "spo/diffusion.hpp"

#include <cassert>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spo/errors.hpp"

namespace spo {

namespace {

void check_timestep(int t, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.t_max()) {
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(sched.t_max()) + "]");
    }
}

}  // namespace

Sample forward_diffuse(std::span<const double> x0, int t, std::span<const double> noise,
                       const NoiseSchedule& sched) {
    check_timestep(t, sched);
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double s = std::sqrt(1.0 - ab);
    Sample out(x0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * noise[i];
    return out;
}

Sample x0_from_noise(std::span<const double> x_t, std::span<const double> eps, int t,
                     const NoiseSchedule& sched) {
    check_timestep(t, sched);
    if (t == 0) return Sample(x_t.begin(), x_t.end());
    const double ab = sched.alpha_bar(t);
    const double s = std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(ab);
    Sample out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps[i]) * inv;
    return out;
}

Sample estimate_x0(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                   const NoiseSchedule& sched) {
    check_timestep(t, sched);
    if (t == 0) return Sample(x_t.begin(), x_t.end());
    return x0_from_noise(x_t, predict_noise(params, x_t, t, c), t, sched);
}

TransitionCoeffs transition_coeffs(const NoiseSchedule& sched, int t_from, int t_to, double eta) {
    check_timestep(t_from, sched);
    check_timestep(t_to, sched);
    if (!(t_from > t_to)) throw std::invalid_argument("transition requires t_from > t_to");
    const double ab_from = sched.alpha_bar(t_from);
    const double ab_to = sched.alpha_bar(t_to);
    const double sigma = eta * std::sqrt((1.0 - ab_to) / (1.0 - ab_from)) * std::sqrt(1.0 - ab_from / ab_to);
    const double dir2 = 1.0 - ab_to - sigma * sigma;
    // Clamp round-off; a real negative value means eta > 1.
    if (dir2 < -1e-12) throw NumericError("DDIM direction variance negative (eta > 1?)");
    const double dir = std::sqrt(std::max(dir2, 0.0));
    TransitionCoeffs k;
    k.x_coef = std::sqrt(ab_to / ab_from);
    k.eps_coef = dir - std::sqrt(ab_to) * std::sqrt(1.0 - ab_from) / std::sqrt(ab_from);
    k.std = sigma;
    return k;
}

GaussianTransition transition_from_noise(std::span<const double> x_t, std::span<const double> eps,
                                         const TransitionCoeffs& k) {
    GaussianTransition tr;
    tr.mean.resize(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) tr.mean[i] = k.x_coef * x_t[i] + k.eps_coef * eps[i];
    tr.std = k.std;
    return tr;
}

GaussianTransition ddim_transition(const DenoiserParams& params, std::span<const double> x_t, int t_from,
                                   int t_to, Condition c, double scale, double eta,
                                   const NoiseSchedule& sched) {
    const TransitionCoeffs k = transition_coeffs(sched, t_from, t_to, eta);
    const Sample eps = transition_noise(params, x_t, t_from, c, scale);
    return transition_from_noise(x_t, eps, k);
}

Sample sample_step(const GaussianTransition& trans, RngStream& rng) {
    Sample x = trans.mean;
    if (trans.std == 0.0) return x;
    for (auto& v : x) v += trans.std * rng.normal();
    return x;
}

double log_prob(const GaussianTransition& trans, std::span<const double> x) {
    if (!(trans.std > 0.0)) throw NumericError("log_prob of a zero-variance transition is undefined");
    const double d = static_cast<double>(x.size());
    const double r2 = squared_distance(x, trans.mean);
    return -d * std::log(trans.std) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
           r2 / (2.0 * trans.std * trans.std);
}

std::vector<Sample> rollout_from(const DenoiserParams& params, Sample x, std::size_t from, std::size_t to,
                                 Condition c, const SamplerGrid& grid, double scale,
                                 const NoiseSchedule& sched, RngStream& rng) {
    std::vector<Sample> traj;
    traj.reserve(to - from + 1);
    traj.push_back(std::move(x));
    for (std::size_t i = from; i < to; ++i) {
        const auto tr = ddim_transition(params, traj.back(), grid.timesteps[i], grid.timesteps[i + 1], c, scale,
                                        grid.eta, sched);
        traj.push_back(sample_step(tr, rng));
    }
    return traj;
}

std::vector<Sample> rollout(const DenoiserParams& params, Condition c, const SamplerGrid& grid, double scale,
                            const NoiseSchedule& sched, RngStream& rng) {
    Sample x_T = rng.normal_vector(static_cast<std::size_t>(params.arch().data_dim));
    return rollout_from(params, std::move(x_T), 0, grid.timesteps.size() - 1, c, grid, scale, sched, rng);
}

}  // namespace spo
