#include "spo/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "spo/errors.hpp"

namespace spo {

NoiseSchedule NoiseSchedule::linear(int t_max, double beta_start, double beta_end) {
    if (t_max < 1) throw ConfigError("schedule needs t_max >= 1");
    std::vector<double> betas(static_cast<std::size_t>(t_max));
    for (int i = 0; i < t_max; ++i) {
        const double f = t_max == 1 ? 0.0 : static_cast<double>(i) / (t_max - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * f;
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ConfigError("schedule needs at least one beta");
    alpha_bars_.resize(betas_.size() + 1);
    alpha_bars_[0] = 1.0;
    for (std::size_t t = 1; t < alpha_bars_.size(); ++t) {
        const double b = betas_[t - 1];
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta outside (0, 1)");
        alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - b);
        if (!(alpha_bars_[t] < alpha_bars_[t - 1])) throw NumericError("alpha_bar not strictly decreasing");
    }
}

SamplerGrid SamplerGrid::uniform(int t_max, int steps, double eta) {
    if (steps < 1 || steps > t_max) throw ConfigError("sampler steps must be in [1, t_max]");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must be in [0, 1]");
    SamplerGrid g;
    g.steps = steps;
    g.eta = eta;
    g.timesteps.resize(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i) {
        g.timesteps[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(t_max) * (steps - i) / steps));
    }
    return g;
}

}  // namespace spo
