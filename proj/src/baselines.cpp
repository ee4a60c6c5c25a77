#include "spo/baselines.hpp"

#include <cmath>

#include "spo/diffusion.hpp"
#include "spo/errors.hpp"
#include "spo/evaluation.hpp"
#include "spo/scorer.hpp"

namespace spo {

std::string to_string(BaselineKind k) { return k == BaselineKind::D3poStyle ? "d3po" : "diffusion_dpo"; }

BaselineKind parse_baseline_kind(const std::string& s) {
    if (s == "d3po") return BaselineKind::D3poStyle;
    if (s == "diffusion_dpo") return BaselineKind::DiffusionDpoStyle;
    throw ConfigError("unknown baseline kind '" + s + "' (expected d3po or diffusion_dpo)");
}

std::optional<TrajectoryPair> make_d3po_pair(const DenoiserParams& policy, const Sample& x_T, Condition c,
                                             const SpoConfig& config, const OracleSpec& oracle,
                                             const NoiseSchedule& sched, RngStream rng_a, RngStream rng_b) {
    const SamplerGrid grid = config.grid(sched.t_max());
    const std::size_t last = grid.timesteps.size() - 1;
    auto a = rollout_from(policy, x_T, 0, last, c, grid, config.guidance, sched, rng_a);
    auto b = rollout_from(policy, x_T, 0, last, c, grid, config.guidance, sched, rng_b);
    switch (oracle_label(a.back(), b.back(), c, oracle)) {
        case PreferenceLabel::WinA: return TrajectoryPair{std::move(a), std::move(b), c};
        case PreferenceLabel::WinB: return TrajectoryPair{std::move(b), std::move(a), c};
        case PreferenceLabel::Tie: break;
    }
    return std::nullopt;
}

std::vector<TrajectoryPair> collect_d3po_pairs(const DenoiserParams& policy, std::span<const Condition> prompts,
                                               const SpoConfig& config, const OracleSpec& oracle,
                                               const NoiseSchedule& sched, const RngStream& rng) {
    std::vector<TrajectoryPair> out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const RngStream pr = rng.derive(i);
        RngStream start = pr.derive(0);
        const Sample x_T = start.normal_vector(static_cast<std::size_t>(policy.arch().data_dim));
        if (auto p = make_d3po_pair(policy, x_T, prompts[i], config, oracle, sched, pr.derive(1), pr.derive(2))) {
            out.push_back(std::move(*p));
        }
    }
    return out;
}

std::vector<StepPreferencePair> d3po_step_terms(const TrajectoryPair& pair, const SpoConfig& config,
                                                const NoiseSchedule& sched) {
    const SamplerGrid grid = config.grid(sched.t_max());
    std::vector<StepPreferencePair> terms;
    for (std::size_t i = 0; i + 1 < pair.w_traj.size(); ++i) {
        StepPreferencePair p;
        p.parent = pair.w_traj[i];
        p.loser_parent = pair.l_traj[i];
        p.x_w = pair.w_traj[i + 1];
        p.x_l = pair.l_traj[i + 1];
        p.t_from = grid.timesteps[i];
        p.t_to = grid.timesteps[i + 1];
        p.c = pair.c;
        p.tied = transition_coeffs(sched, p.t_from, p.t_to, config.eta).std == 0.0;
        terms.push_back(std::move(p));
    }
    return terms;
}

std::vector<PreferredPair> make_offline_dataset(std::span<const CleanPair> pairs) {
    std::vector<PreferredPair> out;
    for (const auto& p : pairs) {
        if (p.label == PreferenceLabel::WinA) out.push_back({p.a, p.b, p.c});
        if (p.label == PreferenceLabel::WinB) out.push_back({p.b, p.a, p.c});
    }
    return out;
}

namespace {

// x_{t_to} ~ q(. | x0), then x_{t_from} ~ q(. | x_{t_to}).
std::pair<Sample, Sample> noised_step(const Sample& x0, int t_from, int t_to, const NoiseSchedule& sched,
                                      RngStream& rng) {
    Sample x_to = forward_diffuse(x0, t_to, rng.normal_vector(x0.size()), sched);
    const double ratio = sched.alpha_bar(t_from) / sched.alpha_bar(t_to);
    const double a = std::sqrt(ratio), s = std::sqrt(1.0 - ratio);
    Sample x_from(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) x_from[i] = a * x_to[i] + s * rng.normal();
    return {std::move(x_from), std::move(x_to)};
}

}  // namespace

std::vector<StepPreferencePair> collect_diffusion_dpo_pairs(std::span<const PreferredPair> dataset,
                                                            const NoiseSchedule& sched, const SpoConfig& config,
                                                            std::size_t count, RngStream& rng) {
    if (dataset.empty()) throw ConfigError("diffusion-DPO baseline needs a non-empty offline dataset");
    const SamplerGrid grid = config.grid(sched.t_max());
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i + 1 < grid.timesteps.size(); ++i) {
        if (transition_coeffs(sched, grid.timesteps[i], grid.timesteps[i + 1], config.eta).std > 0.0) usable.push_back(i);
    }
    if (usable.empty()) throw ConfigError("no sampler step has a non-degenerate transition (eta = 0?)");
    std::vector<StepPreferencePair> terms;
    terms.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const PreferredPair& d = dataset[rng.index(dataset.size())];
        const std::size_t g = usable[rng.index(usable.size())];
        StepPreferencePair p;
        p.t_from = grid.timesteps[g];
        p.t_to = grid.timesteps[g + 1];
        p.c = d.c;
        std::tie(p.parent, p.x_w) = noised_step(d.x0_w, p.t_from, p.t_to, sched, rng);
        Sample lp;
        std::tie(lp, p.x_l) = noised_step(d.x0_l, p.t_from, p.t_to, sched, rng);
        p.loser_parent = std::move(lp);
        terms.push_back(std::move(p));
    }
    return terms;
}

TrainResult baseline_train(BaselineKind kind, const DenoiserParams& base, const BaselineConfig& config,
                           const OracleSpec& oracle, const NoiseSchedule& sched, const TrainHooks& hooks,
                           int threads) {
    const SpoConfig& sc = config.spo;
    sc.validate(sched.t_max());
    TrainResult result;
    result.policy = base;
    const DenoiserParams reference = base;
    const RngStream root(sc.seed);
    const auto prompts = epoch_prompts(sc, base.arch().num_classes);
    std::vector<double> grad(base.size());

    std::vector<PreferredPair> dataset;
    RngStream term_rng = root.derive(0x5eed);
    if (kind == BaselineKind::DiffusionDpoStyle) {
        RngStream data_rng = root.derive(0xda7a);
        const auto clean = generate_clean_pairs(base, sched, sc.grid(sched.t_max()), sc.guidance, oracle,
                                                static_cast<std::size_t>(config.offline_pairs), data_rng);
        dataset = make_offline_dataset(clean);
    }

    EvalSettings eval;
    eval.rollouts = sc.eval_rollouts;
    eval.guidance = sc.guidance;
    eval.steps = sc.sampler_steps;
    eval.eta = sc.eta;
    eval.threads = threads;

    bool budget_done = false;
    for (int epoch = 0; epoch < sc.epochs && !budget_done; ++epoch) {
        int batch_index = 0;
        for (std::size_t start = 0; start < prompts.size() && !budget_done;
             start += static_cast<std::size_t>(sc.batch_size), ++batch_index) {
            const std::size_t len = std::min(prompts.size() - start, static_cast<std::size_t>(sc.batch_size));
            const std::span<const Condition> slice(prompts.data() + start, len);
            const RngStream batch_rng =
                root.derive(static_cast<std::uint64_t>(epoch) * 1000003u + static_cast<std::uint64_t>(batch_index));

            std::vector<StepPreferencePair> terms;
            if (kind == BaselineKind::D3poStyle) {
                for (const auto& tp : collect_d3po_pairs(result.policy, slice, sc, oracle, sched, batch_rng)) {
                    auto t = d3po_step_terms(tp, sc, sched);
                    terms.insert(terms.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
                }
            } else {
                terms = collect_diffusion_dpo_pairs(dataset, sched, sc,
                                                    static_cast<std::size_t>(config.diffusion_dpo_terms_per_batch),
                                                    term_rng);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            BatchLoss bl;
            try {
                bl = loss_and_gradient(result.policy, reference, terms, sc, sched, grad);
            } catch (const NumericError& e) {
                if (hooks.on_abort) hooks.on_abort(result.policy);
                throw TrainingError(std::string("baseline training failed: ") + e.what(),
                                    static_cast<long>(result.updates));
            }
            if (!std::isfinite(bl.loss) || !all_finite(grad)) {
                if (hooks.on_abort) hooks.on_abort(result.policy);
                throw TrainingError("baseline loss is not finite", static_cast<long>(result.updates));
            }
            TrainLogRow row;
            row.epoch = epoch;
            row.batch = batch_index;
            row.loss = bl.loss;
            row.tied_fraction =
                static_cast<double>(bl.tied) / static_cast<double>(std::max<std::size_t>(1, bl.tied + bl.used));
            row.grad_norm = bl.used ? apply_update(result.policy, grad, sc) : 0.0;
            result.gradient_pairs += bl.used;
            ++result.updates;
            if (sc.pair_budget > 0 && result.gradient_pairs >= static_cast<std::size_t>(sc.pair_budget)) {
                budget_done = true;
            }
            const bool epoch_end = budget_done || start + len >= prompts.size();
            if (epoch_end && sc.eval_rollouts > 0) {
                row.mean_oracle_reward_eval = evaluate_policy(result.policy, nullptr, oracle, sched, eval).mean_reward;
            }
            result.log.push_back(row);
            if (hooks.on_row) hooks.on_row(row);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.policy);
    }
    return result;
}

}  // namespace spo
