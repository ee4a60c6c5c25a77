#pragma once

// Step-aware preference optimization: shared-latent candidate generation,
// step-wise resampling, the per-step DPO objective and the online
// sample-then-update training loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/diffusion.hpp"
#include "spo/evaluation.hpp"
#include "spo/preference.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/scorer.hpp"

namespace spo {

// How the next step's x_t is chosen from a candidate set. None is the
// ablation without a resampler: k trajectories evolve independently and
// each step compares their children.
enum class Resampler { None, Win, Lose, Random };
enum class PairChoice { BestWorst, RandomPair };

std::string to_string(Resampler r);
std::string to_string(PairChoice p);
Resampler parse_resampler(const std::string& s);
PairChoice parse_pair_choice(const std::string& s);

struct SpoConfig {
    double beta = 10.0;
    int kappa = 750;
    int k = 4;
    int inner_steps = 1;
    Resampler resampler = Resampler::Random;
    PairChoice pair_choice = PairChoice::BestWorst;
    int sampler_steps = 20;
    double eta = 1.0;
    double guidance = 5.0;
    // Evaluate the optimized log-densities with the same guided transition
    // that produced the samples; false scores the plain conditional model.
    bool guided_logprob = true;
    double lr = 0.02;
    double clip_norm = 1.0;
    int batch_size = 16;          // prompts per update
    int prompts_per_epoch = 64;
    int epochs = 10;
    long pair_budget = 0;         // stop after this many gradient-bearing pairs (0: no limit)
    int eval_rollouts = 200;      // per-epoch oracle evaluation
    std::uint64_t seed = 0;

    // Throws ConfigError naming the violated constraint.
    void validate(int t_max) const;
    SamplerGrid grid(int t_max) const { return SamplerGrid::uniform(t_max, sampler_steps, eta); }

    friend bool operator==(const SpoConfig&, const SpoConfig&) = default;
};

// The first transition of one candidate's inner trajectory; this is the
// density the DPO loss optimizes.
struct TransitionLog {
    int t_from = 0;
    int t_to = 0;
    Sample sample;
    GaussianTransition transition;
};

struct CandidateSet {
    Sample parent;
    std::size_t grid_from = 0;
    std::size_t grid_to = 0;
    int t_from = 0;
    int t_to = 0;                      // timestep of the candidate endpoints
    std::vector<Sample> candidates;    // endpoints after inner_steps transitions
    std::vector<TransitionLog> first_steps;
};

struct StepPreferencePair {
    Sample parent;
    Sample x_w;  // first inner sample of the winner
    Sample x_l;  // first inner sample of the loser
    // Set only when the loser descends from a different latent (no-resampler
    // ablation and trajectory-level baselines).
    std::optional<Sample> loser_parent;
    int t_from = 0;
    int t_to = 0;
    Condition c;
    bool tied = false;
    double score_w = 0.0;
    double score_l = 0.0;
    std::size_t prompt = 0;

    const Sample& parent_l() const { return loser_parent ? *loser_parent : parent; }
};

struct RolloutBatch {
    std::vector<StepPreferencePair> pairs;  // grouped by prompt, then by step
    std::size_t prompts = 0;

    std::size_t tied() const;
    std::size_t untied() const { return pairs.size() - tied(); }
};

// k candidates, each reached by inner_steps transitions from the same x_t
// at grid index grid_from. Throws ConfigError when the strides overrun the grid.
CandidateSet sample_candidates(const DenoiserParams& policy, std::span<const double> x_t, std::size_t grid_from,
                               Condition c, const SpoConfig& config, const NoiseSchedule& sched, RngStream& rng);

// Win / Lose return the labeled candidate (falling back to Random when no
// labeling exists); Random ignores the labels.
Sample resample_next(const CandidateSet& cs, std::optional<std::size_t> win, std::optional<std::size_t> lose,
                     Resampler strategy, RngStream& rng);

// -log sigmoid(u) with u = beta * (log-ratio(x_w) - log-ratio(x_l)); both
// log-ratios policy over reference at the pair's logged step.
double dpo_pair_loss(const DenoiserParams& policy, const DenoiserParams& reference, const StepPreferencePair& pair,
                     const SpoConfig& config, const NoiseSchedule& sched);

// The inner term u of a pair.
double dpo_margin(const DenoiserParams& policy, const DenoiserParams& reference, const StepPreferencePair& pair,
                  const SpoConfig& config, const NoiseSchedule& sched);

// Adds weight * d(pair loss)/d(policy) into grad; returns the pair loss.
double accumulate_pair_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                                const StepPreferencePair& pair, const SpoConfig& config, const NoiseSchedule& sched,
                                double weight, std::span<double> grad);

struct BatchLoss {
    double loss = 0.0;  // mean over untied pairs, 0 when all are tied
    std::size_t used = 0;
    std::size_t tied = 0;
};

double spo_batch_loss(const DenoiserParams& policy, const DenoiserParams& reference, const RolloutBatch& batch,
                      const SpoConfig& config, const NoiseSchedule& sched);
BatchLoss spo_batch_loss_detail(const DenoiserParams& policy, const DenoiserParams& reference,
                                std::span<const StepPreferencePair> pairs, const SpoConfig& config,
                                const NoiseSchedule& sched);

// Exact gradient of spo_batch_loss with respect to the policy parameters.
std::vector<double> loss_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                                  const RolloutBatch& batch, const SpoConfig& config, const NoiseSchedule& sched);
BatchLoss loss_and_gradient(const DenoiserParams& policy, const DenoiserParams& reference,
                            std::span<const StepPreferencePair> pairs, const SpoConfig& config,
                            const NoiseSchedule& sched, std::span<double> grad);

// Walks the sampler grid in inner_steps strides for every prompt and
// records one pair per stride: floor(sampler_steps / inner_steps) per prompt.
// Prompt i uses rng.derive(i).
RolloutBatch collect_rollout(const DenoiserParams& policy, std::span<const Condition> prompts,
                             const PreferenceScorer& scorer, const SpoConfig& config, const NoiseSchedule& sched,
                             const RngStream& rng, int threads = 1);

struct TrainLogRow {
    int epoch = 0;
    int batch = 0;
    double loss = 0.0;
    double tied_fraction = 0.0;
    std::optional<double> mean_oracle_reward_eval;  // filled on the last batch of an epoch
    double grad_norm = 0.0;
};

struct TrainHooks {
    std::function<void(int epoch, const DenoiserParams& policy)> on_epoch_end;
    std::function<void(const TrainLogRow&)> on_row;
    // Called with the last finite policy before a TrainingError is thrown.
    std::function<void(const DenoiserParams& last_good)> on_abort;
};

struct TrainResult {
    DenoiserParams policy;
    std::vector<TrainLogRow> log;
    std::size_t gradient_pairs = 0;
    std::size_t updates = 0;
};

// Policy starts at base, reference is a frozen copy of base. Every batch
// is collected with the current policy, then one clipped SGD step is taken.
TrainResult spo_train(const DenoiserParams& base, const PreferenceScorer& scorer, const SpoConfig& config,
                      const OracleSpec& oracle, const NoiseSchedule& sched, const TrainHooks& hooks = {},
                      int threads = 1);

// Shared by all trainers: prompts for one epoch, labels cycling in order.
std::vector<Condition> epoch_prompts(const SpoConfig& config, int num_classes);

// Shared SGD step with clipping; returns the pre-clip gradient norm.
double apply_update(DenoiserParams& policy, std::vector<double>& grad, const SpoConfig& config);

}  // namespace spo
