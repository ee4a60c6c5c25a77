#pragma once

#include <span>
#include <vector>

namespace spo {

// Beta / cumulative-alpha tables of the forward process.
// alpha_bar(0) = 1 and alpha_bar(t) = prod_{i<t} (1 - beta_i) for t in [0, T_max].
class NoiseSchedule {
public:
    // Linearly spaced betas from beta_start to beta_end over t_max steps.
    static NoiseSchedule linear(int t_max = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

    explicit NoiseSchedule(std::vector<double> betas);

    int t_max() const { return static_cast<int>(betas_.size()); }
    double beta(int i) const { return betas_.at(static_cast<std::size_t>(i)); }
    double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }
    std::span<const double> betas() const { return betas_; }
    std::span<const double> alpha_bars() const { return alpha_bars_; }

    double beta_start() const { return betas_.front(); }
    double beta_end() const { return betas_.back(); }

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

// Descending timesteps visited by the sampler, T_max first, 0 last.
struct SamplerGrid {
    int steps = 20;
    double eta = 1.0;
    std::vector<int> timesteps;

    // Evenly spaced grid: timesteps[i] = round(t_max * (steps - i) / steps).
    static SamplerGrid uniform(int t_max, int steps = 20, double eta = 1.0);
};

}  // namespace spo
