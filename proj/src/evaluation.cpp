#include "spo/evaluation.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "spo/diffusion.hpp"

namespace spo {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

EvalReport evaluate_policy(const DenoiserParams& policy, const DenoiserParams* reference, const OracleSpec& oracle,
                           const NoiseSchedule& sched, const EvalSettings& settings) {
    const SamplerGrid grid = SamplerGrid::uniform(sched.t_max(), settings.steps, settings.eta);
    const RngStream root(settings.seed);
    const auto n = static_cast<std::size_t>(settings.rollouts);
    std::vector<double> mine(n), theirs(reference ? n : 0);
    parallel_for(n, settings.threads, [&](std::size_t i) {
        const Condition c(static_cast<int>(i % static_cast<std::size_t>(oracle.num_classes())));
        RngStream r = root.derive(i);
        mine[i] = oracle_reward(rollout(policy, c, grid, settings.guidance, sched, r).back(), c, oracle);
        if (reference) {
            RngStream rr = root.derive(i);
            theirs[i] = oracle_reward(rollout(*reference, c, grid, settings.guidance, sched, rr).back(), c, oracle);
        }
    });

    EvalReport rep;
    rep.n = n;
    double sum = 0.0;
    for (double v : mine) sum += v;
    rep.mean_reward = n ? sum / static_cast<double>(n) : 0.0;
    double ss = 0.0;
    for (double v : mine) ss += (v - rep.mean_reward) * (v - rep.mean_reward);
    rep.std_reward = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (reference) {
        double wins = 0.0;
        std::size_t ties = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mine[i] > theirs[i]) {
                wins += 1.0;
            } else if (mine[i] == theirs[i]) {
                wins += 0.5;
                ++ties;
            }
        }
        rep.win_rate = n ? wins / static_cast<double>(n) : 0.5;
        rep.tied_fraction = n ? static_cast<double>(ties) / static_cast<double>(n) : 0.0;
    }
    rep.rewards = std::move(mine);
    return rep;
}

}  // namespace spo
