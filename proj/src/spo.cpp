#include "spo/spo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spo/errors.hpp"
#include "spo/optim.hpp"
#include "spo/synthetic.hpp"

namespace spo {

std::string to_string(Resampler r) {
    switch (r) {
        case Resampler::None: return "none";
        case Resampler::Win: return "win";
        case Resampler::Lose: return "lose";
        case Resampler::Random: return "random";
    }
    return "?";
}

std::string to_string(PairChoice p) { return p == PairChoice::BestWorst ? "best_worst" : "random_pair"; }

Resampler parse_resampler(const std::string& s) {
    if (s == "none") return Resampler::None;
    if (s == "win") return Resampler::Win;
    if (s == "lose") return Resampler::Lose;
    if (s == "random") return Resampler::Random;
    throw ConfigError("unknown resampler '" + s + "' (expected none, win, lose or random)");
}

PairChoice parse_pair_choice(const std::string& s) {
    if (s == "best_worst") return PairChoice::BestWorst;
    if (s == "random_pair") return PairChoice::RandomPair;
    throw ConfigError("unknown pair_choice '" + s + "' (expected best_worst or random_pair)");
}

void SpoConfig::validate(int t_max) const {
    if (!(beta > 0.0)) throw ConfigError("spo.beta must be > 0");
    if (k < 1) throw ConfigError("spo.k must be >= 1");
    if (inner_steps < 1) throw ConfigError("spo.inner_steps must be >= 1");
    if (sampler_steps < 1 || sampler_steps > t_max) throw ConfigError("spo.sampler_steps must be in [1, t_max]");
    if (inner_steps > sampler_steps) throw ConfigError("spo.inner_steps overruns the sampler grid");
    if (kappa < 0 || kappa > t_max) throw ConfigError("spo.kappa must be in [0, t_max]");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("spo.eta must be in [0, 1]");
    if (batch_size < 1) throw ConfigError("spo.batch_size must be >= 1");
    if (prompts_per_epoch < 1) throw ConfigError("spo.prompts_per_epoch must be >= 1");
    if (epochs < 0) throw ConfigError("spo.epochs must be >= 0");
    if (lr < 0.0) throw ConfigError("spo.lr must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("spo.clip_norm must be > 0");
    if (pair_budget < 0) throw ConfigError("spo.pair_budget must be >= 0");
}

std::size_t RolloutBatch::tied() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.tied; }));
}

CandidateSet sample_candidates(const DenoiserParams& policy, std::span<const double> x_t, std::size_t grid_from,
                               Condition c, const SpoConfig& config, const NoiseSchedule& sched, RngStream& rng) {
    const SamplerGrid grid = config.grid(sched.t_max());
    const auto j = static_cast<std::size_t>(config.inner_steps);
    if (grid_from + j > static_cast<std::size_t>(grid.steps)) {
        throw ConfigError("inner steps overrun the sampler grid");
    }
    CandidateSet cs;
    cs.parent.assign(x_t.begin(), x_t.end());
    cs.grid_from = grid_from;
    cs.grid_to = grid_from + j;
    cs.t_from = grid.timesteps[grid_from];
    cs.t_to = grid.timesteps[grid_from + j];

    // The first transition leaves the shared parent, so its density is common.
    const int t1 = grid.timesteps[grid_from + 1];
    const GaussianTransition first =
        ddim_transition(policy, x_t, cs.t_from, t1, c, config.guidance, config.eta, sched);
    for (int i = 0; i < config.k; ++i) {
        TransitionLog log{cs.t_from, t1, sample_step(first, rng), first};
        Sample x = log.sample;
        for (std::size_t s = 1; s < j; ++s) {
            const auto tr = ddim_transition(policy, x, grid.timesteps[grid_from + s], grid.timesteps[grid_from + s + 1],
                                            c, config.guidance, config.eta, sched);
            x = sample_step(tr, rng);
        }
        cs.candidates.push_back(std::move(x));
        cs.first_steps.push_back(std::move(log));
    }
    return cs;
}

Sample resample_next(const CandidateSet& cs, std::optional<std::size_t> win, std::optional<std::size_t> lose,
                     Resampler strategy, RngStream& rng) {
    if (cs.candidates.empty()) throw std::invalid_argument("empty candidate set");
    switch (strategy) {
        case Resampler::Win:
            if (win) return cs.candidates.at(*win);
            break;
        case Resampler::Lose:
            if (lose) return cs.candidates.at(*lose);
            break;
        case Resampler::Random:
            break;
        case Resampler::None:
            throw std::invalid_argument("resample_next has no meaning without a resampler");
    }
    return cs.candidates[rng.index(cs.candidates.size())];
}

namespace {

struct Side {
    NoiseTrace trace;
    GaussianTransition policy;
    GaussianTransition reference;
};

Side evaluate_side(const DenoiserParams& policy, const DenoiserParams& reference, const Sample& parent, int t_from,
                   Condition c, double scale, const TransitionCoeffs& k) {
    Side s;
    const Sample ep = transition_noise(policy, parent, t_from, c, scale, s.trace);
    const Sample er = transition_noise(reference, parent, t_from, c, scale);
    s.policy = transition_from_noise(parent, ep, k);
    s.reference = transition_from_noise(parent, er, k);
    const double sd = std::max(k.std, kMinTransitionStd);
    s.policy.std = sd;
    s.reference.std = sd;
    return s;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Returns {loss, u}; accumulates weight * gradient when grad is non-empty.
std::pair<double, double> pair_terms(const DenoiserParams& policy, const DenoiserParams& reference,
                                     const StepPreferencePair& pair, const SpoConfig& config,
                                     const NoiseSchedule& sched, double weight, std::span<double> grad) {
    if (pair.tied) throw std::invalid_argument("DPO loss of a tied pair");
    const TransitionCoeffs k = transition_coeffs(sched, pair.t_from, pair.t_to, config.eta);
    const double scale = config.guided_logprob ? config.guidance : 0.0;

    const Side w = evaluate_side(policy, reference, pair.parent, pair.t_from, pair.c, scale, k);
    std::optional<Side> l_own;
    if (pair.loser_parent) l_own = evaluate_side(policy, reference, *pair.loser_parent, pair.t_from, pair.c, scale, k);
    const Side& l = l_own ? *l_own : w;

    const double ratio_w = log_prob(w.policy, pair.x_w) - log_prob(w.reference, pair.x_w);
    const double ratio_l = log_prob(l.policy, pair.x_l) - log_prob(l.reference, pair.x_l);
    const double u = config.beta * (ratio_w - ratio_l);
    const double loss = softplus(-u);

    if (!grad.empty()) {
        // d loss / d u = -sigmoid(-u); d ratio / d mean = (x - mean) / std^2
        const double g = -weight / (1.0 + std::exp(u)) * config.beta / (w.policy.std * w.policy.std);
        const std::size_t d = pair.x_w.size();
        std::vector<double> dw(d), dl(d);
        for (std::size_t i = 0; i < d; ++i) {
            dw[i] = g * (pair.x_w[i] - w.policy.mean[i]) * k.eps_coef;
            dl[i] = -g * (pair.x_l[i] - l.policy.mean[i]) * k.eps_coef;
        }
        if (l_own) {
            backprop_transition_noise(policy, w.trace, dw, grad);
            backprop_transition_noise(policy, l_own->trace, dl, grad);
        } else {
            for (std::size_t i = 0; i < d; ++i) dw[i] += dl[i];
            backprop_transition_noise(policy, w.trace, dw, grad);
        }
    }
    return {loss, u};
}

}  // namespace

double dpo_pair_loss(const DenoiserParams& policy, const DenoiserParams& reference, const StepPreferencePair& pair,
                     const SpoConfig& config, const NoiseSchedule& sched) {
    return pair_terms(policy, reference, pair, config, sched, 0.0, {}).first;
}

double dpo_margin(const DenoiserParams& policy, const DenoiserParams& reference, const StepPreferencePair& pair,
                  const SpoConfig& config, const NoiseSchedule& sched) {
    return pair_terms(policy, reference, pair, config, sched, 0.0, {}).second;
}

double accumulate_pair_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                                const StepPreferencePair& pair, const SpoConfig& config, const NoiseSchedule& sched,
                                double weight, std::span<double> grad) {
    return pair_terms(policy, reference, pair, config, sched, weight, grad).first;
}

BatchLoss loss_and_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                            std::span<const StepPreferencePair> pairs, const SpoConfig& config,
                            const NoiseSchedule& sched, std::span<double> grad) {
    BatchLoss out;
    for (const auto& p : pairs) (p.tied ? out.tied : out.used)++;
    if (out.used == 0) return out;
    const double weight = 1.0 / static_cast<double>(out.used);
    double total = 0.0;
    for (const auto& p : pairs) {
        if (p.tied) continue;
        total += pair_terms(policy, reference, p, config, sched, weight, grad).first;
    }
    out.loss = total * weight;
    return out;
}

BatchLoss spo_batch_loss_detail(const DenoiserParams& policy, const DenoiserParams& reference,
                                std::span<const StepPreferencePair> pairs, const SpoConfig& config,
                                const NoiseSchedule& sched) {
    return loss_and_gradient(policy, reference, pairs, config, sched, {});
}

double spo_batch_loss(const DenoiserParams& policy, const DenoiserParams& reference, const RolloutBatch& batch,
                      const SpoConfig& config, const NoiseSchedule& sched) {
    return spo_batch_loss_detail(policy, reference, batch.pairs, config, sched).loss;
}

std::vector<double> loss_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                                  const RolloutBatch& batch, const SpoConfig& config, const NoiseSchedule& sched) {
    std::vector<double> grad(policy.size(), 0.0);
    loss_and_gradient(policy, reference, batch.pairs, config, sched, grad);
    return grad;
}

namespace {

// Pair from a labeled candidate set; the loser may have its own parent.
StepPreferencePair make_pair(const CandidateSet& win_set, std::size_t win, const CandidateSet& lose_set,
                             std::size_t lose, Condition c, std::size_t prompt) {
    StepPreferencePair p;
    p.parent = win_set.parent;
    p.x_w = win_set.first_steps[win].sample;
    p.x_l = lose_set.first_steps[lose].sample;
    if (&win_set != &lose_set) p.loser_parent = lose_set.parent;
    p.t_from = win_set.first_steps[win].t_from;
    p.t_to = win_set.first_steps[win].t_to;
    p.c = c;
    p.prompt = prompt;
    return p;
}

std::pair<std::size_t, std::size_t> distinct_pair(std::size_t k, RngStream& rng) {
    const std::size_t a = rng.index(k);
    const std::size_t b = (a + 1 + rng.index(k - 1)) % k;
    return {a, b};
}

void collect_prompt_with_resampler(const DenoiserParams& policy, Condition c, std::size_t prompt,
                                   const PreferenceScorer& scorer, const SpoConfig& config,
                                   const NoiseSchedule& sched, RngStream rng, std::vector<StepPreferencePair>& out) {
    RngStream sampling = rng.derive(0);
    RngStream select = rng.derive(1);
    const auto strides = static_cast<std::size_t>(config.sampler_steps / config.inner_steps);
    const auto j = static_cast<std::size_t>(config.inner_steps);
    Sample x = sampling.normal_vector(static_cast<std::size_t>(policy.arch().data_dim));
    for (std::size_t s = 0; s < strides; ++s) {
        const CandidateSet cs = sample_candidates(policy, x, s * j, c, config, sched, sampling);
        const std::size_t kk = cs.candidates.size();
        std::optional<std::pair<std::size_t, std::size_t>> random_pair;
        if (config.pair_choice == PairChoice::RandomPair && kk >= 2) random_pair = distinct_pair(kk, select);

        const bool degenerate = kk < 2 || cs.first_steps.front().transition.std == 0.0;
        std::optional<std::size_t> win, lose;
        StepPreferencePair pair;
        CandidateLabels labels;
        if (!degenerate) labels = label_candidates(scorer, cs.candidates, cs.t_to, c, config.kappa, cs.t_from);
        if (degenerate || labels.tie_all) {
            pair = make_pair(cs, 0, cs, kk - 1, c, prompt);
            pair.tied = true;
        } else {
            std::size_t wi = labels.win, li = labels.lose;
            if (random_pair) {
                auto [a, b] = *random_pair;
                const bool a_wins = labels.scores[a] > labels.scores[b] ||
                                    (labels.scores[a] == labels.scores[b] && a < b);
                wi = a_wins ? a : b;
                li = a_wins ? b : a;
            }
            pair = make_pair(cs, wi, cs, li, c, prompt);
            pair.score_w = labels.scores[wi];
            pair.score_l = labels.scores[li];
            win = wi;
            lose = li;
        }
        out.push_back(std::move(pair));
        x = resample_next(cs, win, lose, config.resampler, select);
    }
}

// No resampler: k trajectories share x_T and then evolve independently.
void collect_prompt_independent(const DenoiserParams& policy, Condition c, std::size_t prompt,
                                const PreferenceScorer& scorer, const SpoConfig& config, const NoiseSchedule& sched,
                                RngStream rng, std::vector<StepPreferencePair>& out) {
    RngStream sampling = rng.derive(0);
    RngStream select = rng.derive(1);
    const auto strides = static_cast<std::size_t>(config.sampler_steps / config.inner_steps);
    const auto j = static_cast<std::size_t>(config.inner_steps);
    const auto kk = static_cast<std::size_t>(config.k);
    SpoConfig single = config;
    single.k = 1;

    const Sample x_T = sampling.normal_vector(static_cast<std::size_t>(policy.arch().data_dim));
    std::vector<Sample> xs(kk, x_T);
    for (std::size_t s = 0; s < strides; ++s) {
        std::vector<CandidateSet> sets;
        std::vector<Sample> ends;
        for (std::size_t i = 0; i < kk; ++i) {
            sets.push_back(sample_candidates(policy, xs[i], s * j, c, single, sched, sampling));
            ends.push_back(sets.back().candidates.front());
        }
        std::optional<std::pair<std::size_t, std::size_t>> random_pair;
        if (config.pair_choice == PairChoice::RandomPair && kk >= 2) random_pair = distinct_pair(kk, select);

        const CandidateSet& head = sets.front();
        const bool degenerate = kk < 2 || head.first_steps.front().transition.std == 0.0;
        CandidateLabels labels;
        if (!degenerate) labels = label_candidates(scorer, ends, head.t_to, c, config.kappa, head.t_from);
        StepPreferencePair pair;
        if (degenerate || labels.tie_all) {
            pair = make_pair(sets.front(), 0, sets.back(), 0, c, prompt);
            pair.tied = true;
        } else {
            std::size_t wi = labels.win, li = labels.lose;
            if (random_pair) {
                auto [a, b] = *random_pair;
                const bool a_wins = labels.scores[a] > labels.scores[b] ||
                                    (labels.scores[a] == labels.scores[b] && a < b);
                wi = a_wins ? a : b;
                li = a_wins ? b : a;
            }
            pair = make_pair(sets[wi], 0, sets[li], 0, c, prompt);
            pair.score_w = labels.scores[wi];
            pair.score_l = labels.scores[li];
        }
        out.push_back(std::move(pair));
        xs = std::move(ends);
    }
}

}  // namespace

RolloutBatch collect_rollout(const DenoiserParams& policy, std::span<const Condition> prompts,
                             const PreferenceScorer& scorer, const SpoConfig& config, const NoiseSchedule& sched,
                             const RngStream& rng, int threads) {
    config.validate(sched.t_max());
    std::vector<std::vector<StepPreferencePair>> per_prompt(prompts.size());
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        if (config.resampler == Resampler::None) {
            collect_prompt_independent(policy, prompts[i], i, scorer, config, sched, rng.derive(i), per_prompt[i]);
        } else {
            collect_prompt_with_resampler(policy, prompts[i], i, scorer, config, sched, rng.derive(i), per_prompt[i]);
        }
    });
    RolloutBatch batch;
    batch.prompts = prompts.size();
    for (auto& v : per_prompt) {
        for (auto& p : v) batch.pairs.push_back(std::move(p));
    }
    return batch;
}

std::vector<Condition> epoch_prompts(const SpoConfig& config, int num_classes) {
    return balanced_conditions(static_cast<std::size_t>(config.prompts_per_epoch), num_classes);
}

double apply_update(DenoiserParams& policy, std::vector<double>& grad, const SpoConfig& config) {
    const double norm = clip_grad_norm(grad, config.clip_norm);
    sgd_step(policy.weights(), grad, config.lr);
    return norm;
}

TrainResult spo_train(const DenoiserParams& base, const PreferenceScorer& scorer, const SpoConfig& config,
                      const OracleSpec& oracle, const NoiseSchedule& sched, const TrainHooks& hooks, int threads) {
    config.validate(sched.t_max());
    TrainResult result;
    result.policy = base;
    const DenoiserParams reference = base;
    const RngStream root(config.seed);
    const auto prompts = epoch_prompts(config, base.arch().num_classes);
    std::vector<double> grad(base.size());

    EvalSettings eval;
    eval.rollouts = config.eval_rollouts;
    eval.guidance = config.guidance;
    eval.steps = config.sampler_steps;
    eval.eta = config.eta;
    eval.threads = threads;

    bool budget_done = false;
    for (int epoch = 0; epoch < config.epochs && !budget_done; ++epoch) {
        int batch_index = 0;
        for (std::size_t start = 0; start < prompts.size() && !budget_done;
             start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
            const std::size_t len = std::min(prompts.size() - start, static_cast<std::size_t>(config.batch_size));
            const std::span<const Condition> slice(prompts.data() + start, len);
            const RngStream batch_rng = root.derive(static_cast<std::uint64_t>(epoch) * 1000003u + static_cast<std::uint64_t>(batch_index));

            std::fill(grad.begin(), grad.end(), 0.0);
            BatchLoss bl;
            try {
                const RolloutBatch batch = collect_rollout(result.policy, slice, scorer, config, sched, batch_rng, threads);
                bl = loss_and_gradient(result.policy, reference, batch.pairs, config, sched, grad);
            } catch (const NumericError& e) {
                if (hooks.on_abort) hooks.on_abort(result.policy);
                throw TrainingError(std::string("SPO training failed: ") + e.what(), static_cast<long>(result.updates));
            }
            if (!std::isfinite(bl.loss) || !all_finite(grad)) {
                if (hooks.on_abort) hooks.on_abort(result.policy);
                throw TrainingError("SPO loss is not finite", static_cast<long>(result.updates));
            }
            TrainLogRow row;
            row.epoch = epoch;
            row.batch = batch_index;
            row.loss = bl.loss;
            row.tied_fraction = static_cast<double>(bl.tied) / static_cast<double>(std::max<std::size_t>(1, bl.tied + bl.used));
            row.grad_norm = bl.used ? apply_update(result.policy, grad, config) : 0.0;
            result.gradient_pairs += bl.used;
            ++result.updates;
            if (config.pair_budget > 0 && result.gradient_pairs >= static_cast<std::size_t>(config.pair_budget)) {
                budget_done = true;
            }
            const bool epoch_end = budget_done || start + len >= prompts.size();
            if (epoch_end && config.eval_rollouts > 0) {
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
