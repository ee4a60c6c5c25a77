#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/preference.hpp"
#include "spo/schedule.hpp"

namespace spo {

struct EvalSettings {
    int rollouts = 1000;   // spread evenly over the labels
    double guidance = 5.0;
    int steps = 20;
    double eta = 1.0;
    std::uint64_t seed = 20240611;
    int threads = 1;

    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct EvalReport {
    double mean_reward = 0.0;
    double std_reward = 0.0;
    std::optional<double> win_rate;  // vs the reference, exact ties count 1/2
    double tied_fraction = 0.0;      // fraction of exactly tied paired comparisons
    std::size_t n = 0;
    std::vector<double> rewards;
};

// Oracle reward of final samples. Rollout i uses stream derive(i) of the
// seed, so two models evaluated with the same settings see the same x_T and
// the same per-step noise: the comparison against `reference` is paired.
// Results do not depend on the thread count.
EvalReport evaluate_policy(const DenoiserParams& policy, const DenoiserParams* reference, const OracleSpec& oracle,
                           const NoiseSchedule& sched, const EvalSettings& settings);

// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace spo
