#include "spo/preference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "spo/diffusion.hpp"

namespace spo {

PreferenceLabel swapped(PreferenceLabel label) {
    switch (label) {
        case PreferenceLabel::WinA: return PreferenceLabel::WinB;
        case PreferenceLabel::WinB: return PreferenceLabel::WinA;
        case PreferenceLabel::Tie: return PreferenceLabel::Tie;
    }
    return PreferenceLabel::Tie;
}

double oracle_reward(std::span<const double> x0, Condition c, const OracleSpec& spec) {
    if (c.is_unconditional() || !c.valid(spec.num_classes())) {
        throw std::invalid_argument("oracle_reward needs a conditional label");
    }
    const auto& mu = spec.mode_centers[static_cast<std::size_t>(c.label())];
    const double d = static_cast<double>(x0.size());
    return -d * std::log(spec.mode_std) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
           squared_distance(x0, mu) / (2.0 * spec.mode_std * spec.mode_std);
}

PreferenceLabel oracle_label(std::span<const double> a, std::span<const double> b, Condition c,
                             const OracleSpec& spec) {
    const double diff = oracle_reward(a, c, spec) - oracle_reward(b, c, spec);
    if (diff > spec.tie_margin) return PreferenceLabel::WinA;
    if (diff < -spec.tie_margin) return PreferenceLabel::WinB;
    return PreferenceLabel::Tie;
}

double pairwise_prob(double score_a, double score_b, double tau) {
    const double za = tau * score_a;
    const double zb = tau * score_b;
    const double m = std::max(za, zb);
    const double ea = std::exp(za - m);
    const double eb = std::exp(zb - m);
    return ea / (ea + eb);
}

double preference_loss(double p_w, PreferenceLabel label) {
    const double p = std::clamp(p_w, kProbClamp, 1.0 - kProbClamp);
    if (label == PreferenceLabel::Tie) return -0.5 * std::log(p) - 0.5 * std::log(1.0 - p);
    return -std::log(p);
}

NoisyPair make_noisy_pair(const CleanPair& pair, int t, RngStream& rng, const NoiseSchedule& sched) {
    const Sample z = rng.normal_vector(pair.a.size());
    return {forward_diffuse(pair.a, t, z, sched), forward_diffuse(pair.b, t, z, sched), t};
}

}  // namespace spo
