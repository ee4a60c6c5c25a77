#pragma once

// Trajectory-level DPO baselines. Both reuse the step-level loss of the SPO
// trainer unchanged; only the way (x_t, x_w, x_l) triples are produced differs.
//
//  * D3PO-style: two full rollouts from one shared x_T; the oracle's verdict
//    on the final samples is copied to every step of both trajectories.
//  * Diffusion-DPO-style: offline clean pairs; x_t for winner and loser are
//    obtained by independently noising each clean sample.

#include <optional>
#include <span>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/preference.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"
#include "spo/spo.hpp"

namespace spo {

enum class BaselineKind { D3poStyle, DiffusionDpoStyle };

std::string to_string(BaselineKind k);
BaselineKind parse_baseline_kind(const std::string& s);

struct TrajectoryPair {
    std::vector<Sample> w_traj;  // x_T ... x_0
    std::vector<Sample> l_traj;
    Condition c;
};

// Two continuations of one x_T, oriented winner-first; empty when the oracle
// calls the finals a tie.
std::optional<TrajectoryPair> make_d3po_pair(const DenoiserParams& policy, const Sample& x_T, Condition c,
                                             const SpoConfig& config, const OracleSpec& oracle,
                                             const NoiseSchedule& sched, RngStream rng_a, RngStream rng_b);

// One shared x_T and two independent continuations per prompt; pairs whose
// finals tie under the oracle are dropped. Prompt i uses rng.derive(i); the
// two continuations use derive(i).derive(1) and derive(i).derive(2).
std::vector<TrajectoryPair> collect_d3po_pairs(const DenoiserParams& policy, std::span<const Condition> prompts,
                                               const SpoConfig& config, const OracleSpec& oracle,
                                               const NoiseSchedule& sched, const RngStream& rng);

// Every grid step of a trajectory pair as a step-level term carrying the
// final-image label. Zero-variance transitions are marked tied.
std::vector<StepPreferencePair> d3po_step_terms(const TrajectoryPair& pair, const SpoConfig& config,
                                                const NoiseSchedule& sched);

// A clean pair oriented winner-first.
struct PreferredPair {
    Sample x0_w;
    Sample x0_l;
    Condition c;
};

// Oracle-labeled base rollouts with ties dropped, oriented winner-first.
std::vector<PreferredPair> make_offline_dataset(std::span<const CleanPair> pairs);

// `count` step-level terms. For each: a dataset entry and a grid step with
// non-zero transition variance are drawn uniformly; x_{t_to} ~ q(. | x0) and
// x_{t_from} ~ q(. | x_{t_to}) are drawn independently for winner and loser.
std::vector<StepPreferencePair> collect_diffusion_dpo_pairs(std::span<const PreferredPair> dataset,
                                                            const NoiseSchedule& sched, const SpoConfig& config,
                                                            std::size_t count, RngStream& rng);

struct BaselineConfig {
    SpoConfig spo;                    // shared knobs: beta, lr, budget, grid, guidance, ...
    int diffusion_dpo_terms_per_batch = 224;
    int offline_pairs = 4000;
};

// Same log schema and update rule as spo_train.
TrainResult baseline_train(BaselineKind kind, const DenoiserParams& base, const BaselineConfig& config,
                           const OracleSpec& oracle, const NoiseSchedule& sched, const TrainHooks& hooks = {},
                           int threads = 1);

}  // namespace spo
