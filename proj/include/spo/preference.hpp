#pragma once

#include <span>
#include <tuple>
#include <vector>

#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/types.hpp"

namespace spo {

// Programmatic judge of clean samples: reward is the log-density of x0 under
// N(mode_centers[c], mode_std^2 I). Differences within tie_margin are ties.
struct OracleSpec {
    std::vector<Sample> mode_centers = {{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}};
    double mode_std = 0.3;
    double tie_margin = 0.05;

    int num_classes() const { return static_cast<int>(mode_centers.size()); }

    friend bool operator==(const OracleSpec&, const OracleSpec&) = default;
};

enum class PreferenceLabel { WinA, WinB, Tie };

PreferenceLabel swapped(PreferenceLabel label);

double oracle_reward(std::span<const double> x0, Condition c, const OracleSpec& spec);

// WinA when reward(a) - reward(b) > tie_margin, WinB when < -tie_margin,
// Tie otherwise (the boundary itself is a tie).
PreferenceLabel oracle_label(std::span<const double> a, std::span<const double> b, Condition c,
                             const OracleSpec& spec);

// exp(tau a) / (exp(tau a) + exp(tau b)), evaluated without overflow.
double pairwise_prob(double score_a, double score_b, double tau);

inline constexpr double kProbClamp = 1e-7;

// Cross-entropy of the predicted winner probability against the label:
// -log p_w for a decided pair (p_w oriented toward the winner) and the
// uniform-target form -(log p_w + log(1 - p_w)) / 2 for a tie.
double preference_loss(double p_w, PreferenceLabel label);

// Labeled clean pair drawn from the base model.
struct CleanPair {
    Sample a;
    Sample b;
    Condition c;
    PreferenceLabel label = PreferenceLabel::Tie;
};

struct NoisyPair {
    Sample a;
    Sample b;
    int t = 0;
};

// Diffuses both members to timestep t with ONE shared noise draw, so
// out.a - out.b = sqrt(alpha_bar[t]) (a - b).
NoisyPair make_noisy_pair(const CleanPair& pair, int t, RngStream& rng, const NoiseSchedule& sched);

}  // namespace spo
